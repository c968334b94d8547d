"""Flux-switching optimal control of a relaxed Burgers model.

The Jin-Xin relaxation

    eta_t + xi_x = 0,
    xi_t + a^2 eta_x = -(xi - g^beta(eta)) / kappa,   g^beta(eta) = (beta - 1/2) eta^2,

is driven by a convex combination ``beta`` of the fluxes ``+eta^2/2`` and
``-eta^2/2``. The scheme transports the characteristic variables
``eta +- xi/a`` with first-order upwinding at speeds ``+-a`` on a periodic
grid, then treats the stiff source by implicit Euler. The discrete adjoint
of exactly that scheme yields the reduced gradient used by projected
gradient descent. The relaxed optimum is rounded by sum-up rounding and the
resulting integrality gap is measured across control grids.

A scalar bang-bang value-function example is included as well.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .signals import BinaryControl, RelaxedControl, TimeGrid, sum_up_round

CFL = 0.5
Control = Union[np.ndarray, Sequence[float], RelaxedControl, BinaryControl]


class SubcharacteristicWarning(RuntimeWarning):
    """Raised (as a warning) when ``a^2 < max eta^2`` somewhere in a run."""


@dataclass(frozen=True)
class JinXinProblem:
    """Tracking problem for the relaxed Burgers system on a periodic interval.

    Parameters
    ----------
    length : float
        Domain length ``L``.
    t_f : float
        Horizon.
    kappa : float
        Relaxation time, ``> 0``.
    a : float
        Characteristic speed. Needs ``a^2 >= max eta^2``; violations are
        reported by :func:`forward`, not rejected.
    eta0, xi0, target : callable
        Initial data and target profile as functions of ``x``.
    """

    length: float
    t_f: float
    kappa: float
    a: float
    eta0: Callable[[np.ndarray], np.ndarray]
    xi0: Callable[[np.ndarray], np.ndarray]
    target: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not (self.a > 0 and self.length > 0 and self.t_f > 0):
            raise ValueError("a, length and t_f must be positive")
        e0, eL = self.eta0(np.array([0.0, self.length]))
        if abs(e0 - eL) > 1e-9 * max(1.0, abs(e0)):
            raise ValueError("initial data must be periodic")

    @classmethod
    def tracking_example(cls, kappa: float = 0.012, a: float = 2.5) -> "JinXinProblem":
        """Steer ``eta`` back to ``1 - sin x`` on ``[0, 2 pi]`` over ``t_f = 3``
        after a step perturbation of ``xi`` on the middle half."""
        L = 2 * np.pi
        return cls(
            length=L,
            t_f=3.0,
            kappa=kappa,
            a=a,
            eta0=lambda x: 1.0 - np.sin(x),
            xi0=lambda x: np.where((x > L / 4) & (x < 3 * L / 4), 2.0, 0.0),
            target=lambda x: 1.0 - np.sin(x),
        )


@dataclass(frozen=True)
class PDEGrid:
    """``n_x`` periodic cells on ``[0, L)``; nodes ``x_i = L i / n_x``."""

    n_x: int
    length: float

    def __post_init__(self):
        if self.n_x < 3:
            raise ValueError("need at least three cells")

    @classmethod
    def for_problem(cls, problem: JinXinProblem, n_x: int) -> "PDEGrid":
        return cls(int(n_x), problem.length)

    @property
    def dx(self) -> float:
        return self.length / self.n_x

    @property
    def x(self) -> np.ndarray:
        return self.length * (np.arange(self.n_x) / self.n_x)

    def substeps(self, a: float, cell_width: float) -> tuple[float, int]:
        """Step ``dt <= CFL dx / a`` dividing ``cell_width`` exactly; returns ``(dt, k)``."""
        k = int(math.ceil(cell_width * a / (CFL * self.dx) - 1e-9))
        k = max(k, 1)
        return cell_width / k, k


def _beta_values(beta: Control, t_f: float) -> np.ndarray:
    if isinstance(beta, (RelaxedControl, BinaryControl)):
        g = beta.grid
        if abs(g.t0) > 1e-12 or abs(g.tf - t_f) > 1e-12 or np.ptp(g.widths) > 1e-12 * t_f:
            raise ValueError("control must live on a uniform grid over [0, t_f]")
        if beta.n_modes != 2:
            raise ValueError("flux switching uses exactly two modes")
        return np.asarray(beta.values[:, 0], dtype=float)
    b = np.asarray(beta, dtype=float).ravel()
    if b.size == 0:
        raise ValueError("empty control")
    if np.any(b < -1e-12) or np.any(b > 1 + 1e-12):
        raise ValueError("beta must lie in [0, 1]")
    return b


@dataclass(frozen=True)
class JinXinTrajectory:
    """Full space-time history on the simulation grid.

    ``eta[n]`` and ``xi[n]`` hold the state at ``times[n]``; ``beta`` is the
    per-control-cell value and ``substeps`` the number of simulation steps
    per control cell.
    """

    x: np.ndarray
    times: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    beta: np.ndarray
    dt: float
    substeps: int
    max_abs_eta: float
    subcharacteristic_ok: bool

    @property
    def final(self) -> np.ndarray:
        return self.eta[-1]

    @property
    def mass(self) -> np.ndarray:
        return self.eta.sum(axis=1) * (self.x[1] - self.x[0])


def _transport(u: np.ndarray, w: np.ndarray, nu: float):
    # upwind: u moves right, w moves left
    return (1 - nu) * u + nu * np.roll(u, 1), (1 - nu) * w + nu * np.roll(w, -1)


def forward(problem: JinXinProblem, grid: PDEGrid, beta: Control) -> JinXinTrajectory:
    """Simulate the relaxed system under the piecewise-constant control ``beta``.

    Every control cell is split into equal simulation steps with
    ``a dt / dx <= 1/2``. A subcharacteristic violation emits a
    :class:`SubcharacteristicWarning` and is recorded on the result.
    """
    b = _beta_values(beta, problem.t_f)
    a, x = problem.a, grid.x
    dt, k = grid.substeps(a, problem.t_f / b.size)
    nu, h = a * dt / grid.dx, dt / problem.kappa
    steps = b.size * k
    eta = np.empty((steps + 1, grid.n_x))
    xi = np.empty_like(eta)
    eta[0] = problem.eta0(x)
    xi[0] = problem.xi0(x)
    n = 0
    for c in range(b.size):
        s = b[c] - 0.5
        for _ in range(k):
            u, w = _transport(eta[n] + xi[n] / a, eta[n] - xi[n] / a, nu)
            e = 0.5 * (u + w)
            eta[n + 1] = e
            xi[n + 1] = (0.5 * a * (u - w) + h * s * e * e) / (1 + h)
            n += 1
    peak = float(np.abs(eta).max())
    ok = a * a >= peak * peak
    if not ok:
        warnings.warn(f"subcharacteristic condition violated: a^2 = {a * a:.4g} < max eta^2 = {peak * peak:.4g}",
                      SubcharacteristicWarning, stacklevel=2)
    return JinXinTrajectory(x, dt * np.arange(steps + 1), eta, xi, b, dt, k, peak, ok)


def cost(problem: JinXinProblem, grid: PDEGrid, eta_final: np.ndarray) -> float:
    """``1/2 int_0^L (eta - target)^2`` by the periodic trapezoidal rule."""
    d = np.asarray(eta_final) - problem.target(grid.x)
    return 0.5 * grid.dx * float(d @ d)


def objective(problem: JinXinProblem, grid: PDEGrid, beta: Control) -> float:
    return cost(problem, grid, forward(problem, grid, beta).final)


@dataclass(frozen=True)
class AdjointField:
    """Adjoint densities ``(p, q)`` at every simulation time level.

    Sign convention: ``p(t_f) = -(eta(t_f) - target)`` and ``q(t_f) = 0``.
    The arrays are ``-1/dx`` times the derivatives of the discrete cost with
    respect to the grid values of ``eta`` and ``xi``.
    """

    times: np.ndarray
    p: np.ndarray
    q: np.ndarray


def adjoint(problem: JinXinProblem, grid: PDEGrid, traj: JinXinTrajectory) -> AdjointField:
    """Backward sweep with the transpose of the forward scheme."""
    if traj.eta.shape[0] != traj.times.size or traj.eta.shape[1] != grid.n_x:
        raise ValueError("trajectory snapshots do not match the grid")
    a, dx = problem.a, grid.dx
    nu, h = a * traj.dt / dx, traj.dt / problem.kappa
    steps = traj.times.size - 1
    ge = np.empty_like(traj.eta)
    gx = np.empty_like(traj.eta)
    ge[-1] = dx * (traj.final - problem.target(grid.x))
    gx[-1] = 0.0
    for n in range(steps - 1, -1, -1):
        s = traj.beta[n // traj.substeps] - 0.5
        e = traj.eta[n + 1]
        gxs = gx[n + 1] / (1 + h)
        ges = ge[n + 1] + gx[n + 1] * (2 * h * s * e / (1 + h))
        gu = 0.5 * (ges + a * gxs)
        gw = 0.5 * (ges - a * gxs)
        gu = (1 - nu) * gu + nu * np.roll(gu, -1)
        gw = (1 - nu) * gw + nu * np.roll(gw, 1)
        ge[n] = gu + gw
        gx[n] = (gu - gw) / a
    return AdjointField(traj.times, -ge / dx, -gx / dx)


def reduced_gradient(problem: JinXinProblem, grid: PDEGrid, traj: JinXinTrajectory,
                     adj: AdjointField) -> np.ndarray:
    """Exact gradient of the discrete cost with respect to the per-cell ``beta``.

    The discrete counterpart of ``-int int q eta^2 / kappa`` over each control
    cell; the factor ``1/(1 + dt/kappa)`` comes from the implicit source.
    """
    h = traj.dt / problem.kappa
    w = -grid.dx * h / (1 + h)
    per_step = w * np.einsum("ni,ni->n", adj.q[1:], traj.eta[1:] ** 2)
    return per_step.reshape(traj.beta.size, traj.substeps).sum(axis=1)


def gradient(problem: JinXinProblem, grid: PDEGrid, beta: Control) -> tuple[float, np.ndarray]:
    """Cost and discrete-adjoint gradient in one forward/backward pass."""
    traj = forward(problem, grid, beta)
    adj = adjoint(problem, grid, traj)
    return cost(problem, grid, traj.final), reduced_gradient(problem, grid, traj, adj)


def continuous_adjoint_gradient(problem: JinXinProblem, grid: PDEGrid, traj: JinXinTrajectory) -> np.ndarray:
    """Gradient from a direct discretization of the adjoint PDE system.

    Backward upwinding of ``p +- a q`` followed by an implicit decay of ``q``
    and an explicit update of ``p``, with a rectangle rule for
    ``-int int q eta^2 / kappa``. Consistent with :func:`reduced_gradient`
    up to discretization error only; meant as a cross-check.
    """
    a, kappa = problem.a, problem.kappa
    nu, h = a * traj.dt / grid.dx, traj.dt / kappa
    p = -(traj.final - problem.target(grid.x))
    q = np.zeros_like(p)
    steps = traj.times.size - 1
    per_step = np.empty(steps)
    for n in range(steps - 1, -1, -1):
        e = traj.eta[n + 1]
        per_step[n] = -traj.dt * grid.dx * float(q @ (e * e)) / kappa
        s = traj.beta[n // traj.substeps] - 0.5
        r, l = p + a * q, p - a * q
        r = (1 - nu) * r + nu * np.roll(r, -1)
        l = (1 - nu) * l + nu * np.roll(l, 1)
        p, q = 0.5 * (r + l), (r - l) / (2 * a)
        q = q / (1 + h)
        p = p + 2 * h * s * e * q
    return per_step.reshape(traj.beta.size, traj.substeps).sum(axis=1)


# --- descent ---------------------------------------------------------------


@dataclass
class DescentReport:
    """Projected-gradient history; row ``i`` holds ``(J, |projected grad|, step)``."""

    beta: np.ndarray
    J: float
    history: list = field(default_factory=list)
    reason: str = ""

    @property
    def iterations(self) -> int:
        return max(len(self.history) - 1, 0)

    def control(self, t_f: float) -> RelaxedControl:
        return RelaxedControl.from_scalar(TimeGrid.uniform(0.0, t_f, self.beta.size), self.beta)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "J", "grad_norm", "step"])
        for i, (J, g, s) in enumerate(self.history):
            w.writerow([i, repr(float(J)), repr(float(g)), repr(float(s))])
        return buf.getvalue()


def descend(
    problem: JinXinProblem,
    grid: PDEGrid,
    beta0: Control,
    max_iters: int = 400,
    armijo_c: float = 1e-4,
    s0: float = 1.0,
    grad_tol: float = 1e-6,
    step_tol: float = 1e-10,
) -> DescentReport:
    """Projected gradient descent on ``[0, 1]^cells`` with Armijo backtracking.

    The search direction is the ``L^2(0, t_f)`` representative of the
    gradient (the per-cell gradient divided by the cell width), so that the
    initial step ``s0 = 1`` is independent of the control resolution.
    """
    b = _beta_values(beta0, problem.t_f).copy()
    if np.any(b < 0) or np.any(b > 1):
        b = np.clip(b, 0.0, 1.0)
    width = problem.t_f / b.size
    J, g = gradient(problem, grid, b)
    rep = DescentReport(b, J)
    step = 0.0
    for it in range(max_iters + 1):
        d = g / width
        pg = float(np.linalg.norm(b - np.clip(b - d, 0.0, 1.0)))
        rep.history.append((J, pg, step))
        if pg < grad_tol:
            rep.reason = "gradient"
            break
        if it == max_iters:
            rep.reason = "max_iters"
            break
        s = s0
        while True:
            bn = np.clip(b - s * d, 0.0, 1.0)
            Jn = objective(problem, grid, bn)
            if Jn <= J - armijo_c * float(g @ (b - bn)):
                break
            s *= 0.5
            if s < step_tol:
                break
        step = float(np.max(np.abs(bn - b)))
        if s < step_tol or step < step_tol or Jn > J:
            rep.reason = "step"
            break
        b = bn
        J, g = gradient(problem, grid, b)
    rep.beta, rep.J = b, J
    return rep


# --- rounding --------------------------------------------------------------


@dataclass(frozen=True)
class GapReport:
    """Rows ``(dt, J(sigma), gamma)`` sorted by ``dt`` descending, with
    ``gamma = |J(sigma) - J*| / J*``."""

    J_star: float
    rows: tuple
    controls: tuple

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dt", "J_sigma", "gamma"])
        for r in self.rows:
            w.writerow([repr(float(v)) for v in r])
        return buf.getvalue()

    def slope(self) -> float:
        """Least-squares slope of ``log |J(sigma) - J*|`` against ``log dt``."""
        dt = np.array([r[0] for r in self.rows])
        gap = np.array([r[2] for r in self.rows]) * self.J_star
        return float(np.polyfit(np.log(dt), np.log(gap), 1)[0])

    def to_json(self) -> str:
        return json.dumps({"J_star": self.J_star, "rows": [list(map(float, r)) for r in self.rows],
                           "slope": self.slope()}, indent=2)


def _refine_onto(alpha: BinaryControl, fine: TimeGrid) -> Optional[np.ndarray]:
    # express a coarse binary control on a nested finer grid, if it is nested
    k = alpha.grid.locate(fine.nodes[:-1])
    ok = np.all(np.isin(np.round(alpha.grid.nodes / fine.max_step, 9), np.round(fine.nodes / fine.max_step, 9)))
    return alpha.values[k, 0].astype(float) if ok else None


def round_and_gap(
    problem: JinXinProblem,
    grid: PDEGrid,
    beta_star: Control,
    control_steps: Sequence[float] = (1.0, 0.5, 0.25, 0.125),
    jobs: int = 1,
) -> GapReport:
    """Sum-up round ``beta_star`` on each control grid and evaluate the gap.

    When a rounding grid is nested in the grid of ``beta_star`` the binary
    control is simulated on the latter, so every run shares the same
    simulation step and only the rounding differs.
    """
    b = _beta_values(beta_star, problem.t_f)
    fine = TimeGrid.uniform(0.0, problem.t_f, b.size)
    relaxed = RelaxedControl.from_scalar(fine, b)
    J_star = objective(problem, grid, b)

    def one(dt):
        alpha = sum_up_round(relaxed, TimeGrid.with_step(0.0, problem.t_f, dt))
        sig = _refine_onto(alpha, fine)
        if sig is None:
            sig = alpha.values[:, 0].astype(float)
        return alpha, objective(problem, grid, sig)

    steps = sorted(control_steps, reverse=True)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            out = list(ex.map(one, steps))
    else:
        out = [one(dt) for dt in steps]
    rows = tuple((dt, J, abs(J - J_star) / J_star) for dt, (_, J) in zip(steps, out))
    return GapReport(J_star, rows, tuple(a for a, _ in out))


# --- scalar value function -------------------------------------------------


def value_closed(lam, t_f: float = 1.0):
    lam = np.asarray(lam, dtype=float)
    return np.where(lam < 0, math.exp(t_f) * lam, lam)


def value_bruteforce(lam: float, t_f: float = 1.0, n: int = 12) -> float:
    """Minimum of ``y(t_f)`` for ``y' = sigma y, y(0) = lam`` over all
    ``2^n`` bang-bang signals on ``n`` equal cells (exact integration)."""
    if not 1 <= n <= 20:
        raise ValueError("n must lie in 1..20")
    on = np.array([bin(s).count("1") for s in range(2 ** n)])
    return float(np.min(lam * np.exp(on * (t_f / n))))


def value_scan(t_f: float, lambdas: Sequence[float], n: int = 12) -> list[tuple[float, float, float]]:
    return [(float(l), value_bruteforce(l, t_f, n), float(value_closed(l, t_f))) for l in lambdas]
