"""Switched PDE/ODE systems: stability checks, relax-and-round control, switching-time gradients."""

__version__ = "0.1.0"
