"""Persistent excitation and intermittently damped dissipative systems.

Covers the sliding-window PE test, the travelling-pulse counterexample for
the wave equation with localized on/off damping, a leapfrog wave solver
with its discrete energy, the observability-type excitation functional on
finite-dimensional surrogates, and small bookkeeping helpers.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import expm, qr

PE_TOL = 1e-12
KALMAN_RTOL = 1e-10


@dataclass(frozen=True)
class PEParams:
    T: float
    mu: float

    def __post_init__(self):
        if not (self.T > 0 and 0 < self.mu <= self.T):
            raise ValueError("need 0 < mu <= T")


@dataclass(frozen=True, eq=False)
class PiecewiseSignal:
    """Right-continuous piecewise-constant ``[0, 1]``-valued signal.

    ``values[k]`` holds on ``[times[k], times[k+1])``; the last value holds
    up to ``t_end`` (default: forever).
    """

    times: np.ndarray
    values: np.ndarray
    t_end: float = np.inf

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if t.size == 0 or t.size != v.size:
            raise ValueError("times and values must be nonempty and of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any((v < 0) | (v > 1)):
            raise ValueError("signal values must lie in [0, 1]")
        if not self.t_end > t[-1]:
            raise ValueError("t_end must exceed the last breakpoint")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float, t_end: float = np.inf) -> "PiecewiseSignal":
        return cls([0.0], [value], t_end)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.where(idx >= 0, self.values[np.clip(idx, 0, None)], 0.0)

    def integral(self, t):
        """``int_{times[0]}^t sigma``; exact, vectorized."""
        t = np.asarray(t, dtype=float)
        ends = np.append(self.times[1:], np.inf)
        overlap = np.clip(np.minimum(t[..., None], ends) - self.times, 0.0, None)
        return (overlap * self.values).sum(axis=-1)


def counterexample_signal(b: float, horizon: float) -> PiecewiseSignal:
    """Pulses of half width ``mu = 1 - b'`` centred at the even integers, ``b' = (1 + b)/2``."""
    if not 0 < b < 1:
        raise ValueError("b must lie in (0, 1)")
    mu = 1.0 - 0.5 * (1.0 + b)
    times, values = [0.0, mu], [1.0, 0.0]
    k = 1
    while 2 * k - mu < horizon:
        times += [2 * k - mu, 2 * k + mu]
        values += [1.0, 0.0]
        k += 1
    return PiecewiseSignal(times, values, max(horizon, times[-1] + 1.0))


@dataclass(frozen=True)
class PEReport:
    passes: bool
    worst_start: float
    worst_mass: float

    def to_json(self) -> str:
        return json.dumps(
            {"passes": self.passes, "worst_start": self.worst_start, "worst_mass": self.worst_mass},
            indent=2, sort_keys=True,
        ) + "\n"


def is_pe(sigma: PiecewiseSignal, params: PEParams, horizon: float) -> PEReport:
    """Check ``int_t^{t+T} sigma >= mu`` for every window inside ``[0, horizon]``.

    The window mass is piecewise linear in ``t`` with kinks only where ``t``
    or ``t + T`` crosses a breakpoint, so the minimum over the finite
    candidate set ``{0, horizon - T} u {p, p - T}`` is exact.
    """
    T = params.T
    if horizon < T:
        raise ValueError("horizon must be at least the window length")
    last = horizon - T
    cand = np.concatenate([[0.0, last], sigma.times, sigma.times - T])
    cand = np.unique(cand[(cand >= 0) & (cand <= last)])
    mass = sigma.integral(cand + T) - sigma.integral(cand)
    i = int(np.argmin(mass))
    return PEReport(bool(mass[i] >= params.mu - PE_TOL), float(cand[i]), float(mass[i]))


def counterexample_solution(t, x, b: float):
    """Travelling-pulse d'Alembert solution, undamped where the pulses pass.

    ``v = sum_k chi_(b'+2k, 1+2k)(x+t) - chi_(-1-2k, -b'-2k)(x-t)`` with
    ``b' = (1 + b)/2``. Open intervals are used so that the Dirichlet
    values at ``x = 0, 1`` hold pointwise.
    """
    bp = 0.5 * (1.0 + b)
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    # only the shifts that can contain the argument contribute
    p = x + t
    k = np.floor((p - bp) / 2.0)
    r = p - 2.0 * k
    right = (r > bp) & (r < 1.0) & (k >= 0)
    q = x - t
    k2 = np.floor((-q - bp) / 2.0)
    s = -q - 2.0 * k2
    left = (s > bp) & (s < 1.0) & (k2 >= 0)
    return right.astype(float) - left.astype(float)


# ---------------------------------------------------------------------------
# damped wave


@dataclass(frozen=True, eq=False)
class DampingProfile:
    x: np.ndarray
    values: np.ndarray
    support: tuple = (0.0, 1.0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != np.shape(self.x) or np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("damping values must be finite, nonnegative and one per node")
        a, b = self.support
        inside = (self.x > a) & (self.x < b)
        if np.any(v[~inside] != 0) and not (a <= 0 and b >= 1):
            raise ValueError("damping is nonzero outside its declared support")
        object.__setattr__(self, "values", v)

    @classmethod
    def indicator(cls, a: float, b: float, N_x: int, level: float = 1.0) -> "DampingProfile":
        x = np.linspace(0.0, 1.0, N_x + 1)
        return cls(x, np.where((x > a) & (x < b), level, 0.0), (a, b))

    @classmethod
    def constant(cls, level: float, N_x: int) -> "DampingProfile":
        x = np.linspace(0.0, 1.0, N_x + 1)
        return cls(x, np.full(x.size, float(level)), (0.0, 1.0))


@dataclass(frozen=True, eq=False)
class WaveState:
    x: np.ndarray
    v: np.ndarray
    v_t: np.ndarray
    t: float


@dataclass(frozen=True, eq=False)
class EnergyTrace:
    """Discrete energy at the half-step times ``(n + 1/2) dt``."""

    times: np.ndarray
    energy: np.ndarray
    final: Optional[WaveState] = None

    @property
    def initial(self) -> float:
        return float(self.energy[0])

    def at(self, t):
        """Linear interpolation, constant beyond the first and last samples."""
        return np.interp(t, self.times, self.energy)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "E"])
        for a, b in zip(self.times, self.energy):
            w.writerow([repr(float(a)), repr(float(b))])
        return buf.getvalue()


SignalLike = Union[PiecewiseSignal, Callable[[float], float]]


def _on_grid(f, x):
    if f is None:
        return np.zeros_like(x)
    if callable(f):
        return np.asarray(f(x), dtype=float)
    arr = np.asarray(f, dtype=float)
    if arr.shape != x.shape:
        raise ValueError("grid data must have one value per node")
    return arr


def simulate_wave(
    d: DampingProfile,
    sigma: SignalLike,
    v0,
    v1=None,
    t_f: float = 1.0,
    first_step=None,
) -> EnergyTrace:
    """Leapfrog for ``v_tt = v_xx - sigma(t) d(x)^2 v_t`` on ``(0, 1)``, Dirichlet.

    Uses ``dt = dx`` (unit speed, CFL one). The damping term is centred,
    ``sigma d^2 (v^{n+1} - v^{n-1}) / (2 dt)``, which makes the staggered
    energy

        E^{n+1/2} = |(v^{n+1} - v^n)/dt|^2 + <D+ v^{n+1}, D+ v^n>

    (discrete L2 products, midpoint rule on cells) non-increasing and exactly
    conserved when undamped.

    Parameters
    ----------
    v0, v1 : callable or array on ``d.x``
        Displacement and velocity at ``t = 0``.
    first_step : callable or array, optional
        Displacement at ``t = dt``. When given it replaces the Taylor start
        from ``v1``; useful for non-smooth data with known exact solution.
    """
    x = d.x
    N = x.size - 1
    dx = 1.0 / N
    dt = dx
    d2 = d.values**2
    prev = _on_grid(v0, x).copy()
    prev[[0, -1]] = 0.0
    vel = _on_grid(v1, x)

    def lap(v):
        out = np.zeros_like(v)
        out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / dx**2
        return out

    if first_step is not None:
        cur = _on_grid(first_step, x).copy()
    else:
        cur = prev + dt * vel + 0.5 * dt**2 * (lap(prev) - float(sigma(0.0)) * d2 * vel)
    cur[[0, -1]] = 0.0

    n_steps = int(round(t_f / dt))
    times = np.empty(n_steps)
    energy = np.empty(n_steps)

    def staggered(new, old):
        kin = np.sum(((new - old) / dt) ** 2) * dx
        pot = np.sum(np.diff(new) * np.diff(old)) / dx
        return kin + pot

    energy[0] = staggered(cur, prev)
    times[0] = 0.5 * dt
    for n in range(1, n_steps):
        c = 0.5 * dt * float(sigma(n * dt)) * d2
        nxt = (2 * cur - prev + dt**2 * lap(cur) + c * prev) / (1.0 + c)
        nxt[[0, -1]] = 0.0
        prev, cur = cur, nxt
        energy[n] = staggered(cur, prev)
        times[n] = (n + 0.5) * dt
    final = WaveState(x, cur.copy(), (cur - prev) / dt, n_steps * dt)
    return EnergyTrace(times, energy, final)


def counterexample_run(b: float = 0.5, a: float = 0.25, N_x: int = 800, t_f: float = 6.0,
                       full_damping: bool = False) -> EnergyTrace:
    """Wave run with the counterexample signal and exact two-level start."""
    if full_damping:
        d = DampingProfile.constant(1.0, N_x)
    else:
        d = DampingProfile.indicator(a, b, N_x)
    sigma = counterexample_signal(b, t_f + 1.0)
    dt = 1.0 / N_x
    return simulate_wave(
        d, sigma,
        v0=lambda x: counterexample_solution(0.0, x, b),
        t_f=t_f,
        first_step=lambda x: counterexample_solution(dt, x, b),
    )


# ---------------------------------------------------------------------------
# finite-dimensional diagnostics


def _simpson_piece(f, a, b, tol, max_level=20):
    n = 2
    prev = None
    for _ in range(max_level):
        t = np.linspace(a, b, n + 1)
        y = f(t)
        s = (b - a) / (3 * n) * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())
        if prev is not None and abs(s - prev) <= 15 * tol * max(1.0, abs(s)):
            return s + (s - prev) / 15
        prev = s
        n *= 2
    return s


def excitation_functional(A, B, sigma: SignalLike, y0, theta: float, tol: float = 1e-8) -> float:
    """``int_0^theta sigma(t) |B^T e^{At} y0|^2 dt``.

    Composite Simpson with interval doubling on each constant piece of
    ``sigma`` (so the integrand is smooth on every panel), Richardson
    corrected; ``e^{At}`` by scipy's scaling-and-squaring ``expm``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    y0 = np.asarray(y0, dtype=float).ravel()
    if theta <= 0:
        raise ValueError("theta must be positive")
    scale = float(y0 @ y0)
    if scale == 0:
        return 0.0
    # integrate for the unit direction so the stopping rule does not depend on |y0|
    y0 = y0 / np.sqrt(scale)

    def integrand(t):
        out = np.empty(t.size)
        step = expm(A * (t[1] - t[0])) if t.size > 1 else None
        y = expm(A * t[0]) @ y0
        for i in range(t.size):
            if i:
                y = step @ y
            out[i] = np.sum((B.T @ y) ** 2)
        return out

    if isinstance(sigma, PiecewiseSignal):
        edges = np.concatenate([[0.0], sigma.times[(sigma.times > 0) & (sigma.times < theta)], [theta]])
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            s = float(sigma(lo))
            if s:
                total += s * _simpson_piece(integrand, lo, hi, tol)
        return scale * float(total)
    return scale * float(_simpson_piece(lambda t: np.asarray(sigma(t), dtype=float) * integrand(t), 0.0, theta, tol))


def kalman_index(A, B) -> Optional[int]:
    """Smallest ``K`` with ``rank [B, AB, ..., A^K B] = dim``, else ``None``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    blocks = [B]
    for K in range(n):
        if K:
            blocks.append(A @ blocks[-1])
        mat = np.hstack(blocks)
        norm = np.linalg.norm(mat, 2)
        if norm == 0:
            continue
        R = qr(mat, mode="r", pivoting=True)[0]
        rank = int(np.sum(np.abs(np.diag(R)) > KALMAN_RTOL * norm))
        if rank == n:
            return K
    return None


@dataclass(frozen=True)
class ExcitationWindow:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("window needs b > a")
        if not self.c > 0:
            raise ValueError("window constant must be positive")


@dataclass(frozen=True)
class RarefiedReport:
    sup_length: float
    partial_sums: np.ndarray
    flag: bool
    flag_index: Optional[int]  # 1-based window index where the threshold is first exceeded


def rarefied_schedule(windows: Sequence[ExcitationWindow], threshold: float = np.inf) -> RarefiedReport:
    """Bookkeeping for sparse excitation: bounded window lengths, diverging ``sum c_n``."""
    if not windows:
        raise ValueError("need at least one window")
    order = sorted(windows, key=lambda w: w.a)
    for w0, w1 in zip(order[:-1], order[1:]):
        if w1.a < w0.b:
            raise ValueError(f"windows ({w0.a}, {w0.b}) and ({w1.a}, {w1.b}) overlap")
    sums = np.cumsum([w.c for w in windows])
    over = np.flatnonzero(sums > threshold)
    idx = int(over[0]) + 1 if over.size else None
    return RarefiedReport(max(w.b - w.a for w in windows), sums, idx is not None, idx)
