"""Switching-time and mode-insertion sensitivities for hybrid evolutions.

Finite-dimensional instances (ODEs or semi-discretized PDEs) of

    y' = A^{j_n} y + f^{j_n}(t, y)   on (tau_n, tau_{n+1}),
    y(tau_n) = g^{j_{n-1}, j_n}(y^-(tau_n)),

with running cost ``l(t, y)`` and switching costs ``l^{i,j}(tau, y^-)``.
Gradients are assembled from a backward adjoint with jumps at the
switches; all integrations use scipy's adaptive Runge-Kutta with dense
output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import isotonic_regression

BLOWUP_NORM = 1e12
NC_TOL = 1e-8
INSERTION_THRESHOLD = -1e-6


@dataclass(frozen=True)
class Reset:
    """State reset ``g`` with Jacobian ``g_y``."""

    g: Callable[[np.ndarray], np.ndarray]
    g_y: Callable[[np.ndarray], np.ndarray]

    @staticmethod
    def identity(dim: int) -> "Reset":
        eye = np.eye(dim)
        return Reset(lambda y: np.array(y, dtype=float), lambda y: eye)

    @staticmethod
    def affine(G, c=None) -> "Reset":
        G = np.asarray(G, dtype=float)
        c = np.zeros(G.shape[0]) if c is None else np.asarray(c, dtype=float)
        return Reset(lambda y: G @ y + c, lambda y: G)


@dataclass(frozen=True)
class SwitchCost:
    """``l^{i,j}(tau, y^-)`` with partials ``l_tau`` and ``l_y``."""

    l: Callable[[float, np.ndarray], float]
    l_tau: Callable[[float, np.ndarray], float]
    l_y: Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RunningCost:
    l: Callable[[float, np.ndarray], float]
    l_y: Callable[[float, np.ndarray], np.ndarray]

    @staticmethod
    def quadratic(Q, weight: float = 0.5) -> "RunningCost":
        Q = np.asarray(Q, dtype=float)
        return RunningCost(lambda t, y: weight * y @ Q @ y, lambda t, y: weight * (Q + Q.T) @ y)


@dataclass(frozen=True, eq=False)
class HybridSystem:
    """Mode data keyed by 1-based labels.

    ``f[j]``/``f_y[j]`` are optional perturbations ``f(t, y)`` and their
    Jacobians; missing resets are the identity and missing switching costs
    vanish.
    """

    A: Sequence[np.ndarray]
    f: Dict[int, Callable] = field(default_factory=dict)
    f_y: Dict[int, Callable] = field(default_factory=dict)
    resets: Dict[Tuple[int, int], Reset] = field(default_factory=dict)
    switch_costs: Dict[Tuple[int, int], SwitchCost] = field(default_factory=dict)
    running: Optional[RunningCost] = None

    def __post_init__(self):
        mats = tuple(np.atleast_2d(np.asarray(a, dtype=float)) for a in self.A)
        if not mats:
            raise ValueError("at least one mode is required")
        d = mats[0].shape[0]
        if any(m.shape != (d, d) for m in mats):
            raise ValueError("all generators must be square of the same size")
        if set(self.f) != set(self.f_y):
            raise ValueError("every perturbation needs its Jacobian")
        for key in list(self.resets) + list(self.switch_costs):
            if not all(1 <= k <= len(mats) for k in key):
                raise ValueError(f"unknown mode pair {key}")
        object.__setattr__(self, "A", mats)

    @property
    def dim(self) -> int:
        return self.A[0].shape[0]

    @property
    def n_modes(self) -> int:
        return len(self.A)

    def rhs(self, j: int, t: float, y: np.ndarray) -> np.ndarray:
        out = self.A[j - 1] @ y
        if j in self.f:
            out = out + self.f[j](t, y)
        return out

    def jac(self, j: int, t: float, y: np.ndarray) -> np.ndarray:
        if j in self.f_y:
            return self.A[j - 1] + self.f_y[j](t, y)
        return self.A[j - 1]

    def reset(self, i: int, j: int) -> Reset:
        return self.resets.get((i, j)) or Reset.identity(self.dim)

    def cost_l(self, t, y) -> float:
        return 0.0 if self.running is None else float(self.running.l(t, y))

    def cost_ly(self, t, y) -> np.ndarray:
        return np.zeros(self.dim) if self.running is None else np.asarray(self.running.l_y(t, y), dtype=float)

    def check_composition(self, modes: Sequence[int], samples: np.ndarray, atol: float = 1e-10) -> None:
        """Assert ``g^{i,j} = g^{k,j} o g^{i,k}`` on sample states for all listed modes."""
        for i in modes:
            for k in modes:
                for j in modes:
                    gij, gik, gkj = self.reset(i, j), self.reset(i, k), self.reset(k, j)
                    for y in samples:
                        if not np.allclose(gij.g(y), gkj.g(gik.g(y)), atol=atol, rtol=0):
                            raise ValueError(f"reset composition law fails for modes {(i, k, j)}")


@dataclass(frozen=True, eq=False)
class SwitchSchedule:
    """Modes ``j_0..j_N`` and switch times ``tau_1..tau_N`` on ``[0, t_f]``."""

    modes: tuple
    times: tuple
    t_f: float

    def __post_init__(self):
        modes = tuple(int(m) for m in self.modes)
        times = tuple(float(t) for t in self.times)
        if len(modes) != len(times) + 1:
            raise ValueError("need one more mode than switch times")
        if any(m < 1 for m in modes):
            raise ValueError("modes are labelled from 1")
        full = (0.0,) + times + (float(self.t_f),)
        if any(b < a for a, b in zip(full[:-1], full[1:])):
            raise ValueError("switch times must satisfy 0 <= tau_1 <= ... <= tau_N <= t_f")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "t_f", float(self.t_f))

    @property
    def N(self) -> int:
        return len(self.times)

    @property
    def full_times(self) -> np.ndarray:
        return np.array((0.0,) + self.times + (self.t_f,))

    def with_times(self, times) -> "SwitchSchedule":
        return SwitchSchedule(self.modes, tuple(times), self.t_f)

    def interval_of(self, t: float) -> int:
        """Index ``n`` of the last nonempty interval with ``tau_n <= t``."""
        full = self.full_times
        n = int(np.searchsorted(full[:-1], t, side="right")) - 1
        return max(0, min(n, self.N))

    def insert(self, t_hat: float, mode: int) -> Tuple["SwitchSchedule", int]:
        """Expanded schedule with a zero-length interval of ``mode`` at ``t_hat``.

        Returns the schedule and the 1-based index of the switch that closes
        the inserted interval.
        """
        if not 0 <= t_hat <= self.t_f:
            raise ValueError("insertion time outside the horizon")
        n = self.interval_of(t_hat)
        modes = self.modes[: n + 1] + (mode, self.modes[n]) + self.modes[n + 1:]
        times = self.times[:n] + (t_hat, t_hat) + self.times[n:]
        return SwitchSchedule(modes, times, self.t_f), n + 2

    def normalized(self) -> "SwitchSchedule":
        """Drop empty intervals and merge equal neighbours."""
        full = self.full_times
        keep = [n for n in range(self.N + 1) if full[n + 1] > full[n]]
        if not keep:
            return SwitchSchedule((self.modes[-1],), (), self.t_f)
        modes, starts = [self.modes[keep[0]]], []
        for n in keep[1:]:
            if self.modes[n] != modes[-1]:
                modes.append(self.modes[n])
                starts.append(full[n])
        return SwitchSchedule(tuple(modes), tuple(starts), self.t_f)

    def first_entry(self, mode: int) -> Optional[float]:
        """Earliest time at which ``mode`` is active on a nonempty interval."""
        full = self.full_times
        for n, m in enumerate(self.modes):
            if m == mode and full[n + 1] > full[n]:
                return float(full[n])
        return None

    def to_json(self) -> str:
        return json.dumps({"modes": list(self.modes), "times": list(self.times), "t_f": self.t_f})


@dataclass(eq=False)
class Interval:
    t0: float
    t1: float
    mode: int
    sol: Optional[object]  # OdeSolution, None for empty intervals
    y_start: np.ndarray
    y_end: np.ndarray

    def __call__(self, t):
        if self.sol is None:
            return self.y_start
        return self.sol(t)[:-1]


@dataclass(eq=False)
class HybridTrajectory:
    schedule: SwitchSchedule
    intervals: list
    y_minus: list  # y^-(tau_n), n = 1..N (index n-1)
    running_cost: float
    switching_cost: float
    blowup: bool = False

    @property
    def cost(self) -> float:
        return self.running_cost + self.switching_cost

    @property
    def final(self) -> np.ndarray:
        return self.intervals[-1].y_end

    def __call__(self, t: float) -> np.ndarray:
        n = self.schedule.interval_of(t)
        while self.intervals[n].t1 <= self.intervals[n].t0 and n > 0 and t <= self.intervals[n].t0:
            n -= 1
        return self.intervals[n](t)


@dataclass(eq=False)
class HybridAdjoint:
    intervals: list  # per interval: OdeSolution or None
    p_plus: list  # p(tau_n^+) for n = 0..N, i.e. at the start of interval n after the backward solve
    p_minus: list  # p(tau_n^-) for n = 1..N, after applying the jump rule

    def __call__(self, n: int, t: float) -> np.ndarray:
        sol = self.intervals[n]
        return self.p_plus[n] if sol is None else sol(t)


@dataclass(frozen=True)
class GradientReport:
    grads: np.ndarray
    left_sums: np.ndarray = field(default_factory=lambda: np.zeros(0))
    right_sums: np.ndarray = field(default_factory=lambda: np.zeros(0))
    satisfied: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def to_json(self) -> str:
        return json.dumps(
            {
                "grads": self.grads.tolist(),
                "left_sums": self.left_sums.tolist(),
                "right_sums": self.right_sums.tolist(),
                "satisfied": self.satisfied.tolist(),
            },
            indent=2,
        ) + "\n"


# ---------------------------------------------------------------------------
# forward and adjoint


def simulate_hybrid(
    sys: HybridSystem,
    schedule: SwitchSchedule,
    y0,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    method: str = "RK45",
) -> HybridTrajectory:
    """Integrate interval by interval, applying resets exactly at the switches.

    The running cost is accumulated as an extra state component. Empty
    intervals only apply their reset. Integration stops early with
    ``blowup=True`` once ``|y| > 1e12``.
    """
    y = np.asarray(y0, dtype=float).copy()
    if y.shape != (sys.dim,):
        raise ValueError(f"initial state must have shape ({sys.dim},)")
    if max(schedule.modes) > sys.n_modes:
        raise ValueError("schedule uses an unknown mode")
    full = schedule.full_times
    intervals, y_minus = [], []
    running = switching = 0.0

    def blow(t, z):
        return np.linalg.norm(z[:-1]) - BLOWUP_NORM

    blow.terminal = True

    for n, j in enumerate(schedule.modes):
        t0, t1 = full[n], full[n + 1]
        if n > 0:
            prev = schedule.modes[n - 1]
            y_minus.append(y.copy())
            cost = sys.switch_costs.get((prev, j))
            if cost is not None:
                switching += float(cost.l(t0, y))
            y = np.asarray(sys.reset(prev, j).g(y), dtype=float)
        start = y.copy()
        if t1 <= t0:
            intervals.append(Interval(t0, t1, j, None, start, start))
            continue

        def rhs(t, z, j=j):
            yy = z[:-1]
            return np.append(sys.rhs(j, t, yy), sys.cost_l(t, yy))

        sol = solve_ivp(rhs, (t0, t1), np.append(y, 0.0), method=method, rtol=rtol, atol=atol,
                        dense_output=True, events=blow)
        if sol.status == 1 or not sol.success:
            intervals.append(Interval(t0, float(sol.t[-1]), j, sol.sol, start, sol.y[:-1, -1]))
            return HybridTrajectory(schedule, intervals, y_minus, running, switching, blowup=True)
        running += float(sol.y[-1, -1])
        y = sol.y[:-1, -1].copy()
        intervals.append(Interval(t0, t1, j, sol.sol, start, y.copy()))
    return HybridTrajectory(schedule, intervals, y_minus, running, switching)


def reduced_cost(sys, schedule, y0, **kw) -> float:
    return simulate_hybrid(sys, schedule, y0, **kw).cost


def adjoint_hybrid(
    sys: HybridSystem,
    traj: HybridTrajectory,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    method: str = "RK45",
) -> HybridAdjoint:
    """Backward solve of ``p' = -(A + f_y)^T p + l_y`` with ``p(t_f) = 0``.

    At each switch ``p(tau_n^-) = g_y(y^-)^T p(tau_n^+) - l^{j_{n-1},j_n}_y(tau_n, y^-)``.
    """
    if traj.blowup:
        raise ValueError("trajectory blew up; no adjoint available")
    sched = traj.schedule
    N = sched.N
    p = np.zeros(sys.dim)
    sols = [None] * (N + 1)
    p_plus = [None] * (N + 1)
    p_minus = [None] * N
    for n in range(N, -1, -1):
        iv = traj.intervals[n]
        if iv.sol is None and iv.t1 > iv.t0:
            raise ValueError("missing dense output")
        j = iv.mode
        if iv.t1 > iv.t0:
            def rhs(t, q, iv=iv, j=j):
                y = iv(t)
                return -sys.jac(j, t, y).T @ q + sys.cost_ly(t, y)

            sol = solve_ivp(rhs, (iv.t1, iv.t0), p, method=method, rtol=rtol, atol=atol, dense_output=True)
            sols[n] = sol.sol
            p = sol.y[:, -1].copy()
        p_plus[n] = p.copy()
        if n > 0:
            i = sched.modes[n - 1]
            ym = traj.y_minus[n - 1]
            p = sys.reset(i, j).g_y(ym).T @ p
            cost = sys.switch_costs.get((i, j))
            if cost is not None:
                p = p - np.asarray(cost.l_y(iv.t0, ym), dtype=float)
            p_minus[n - 1] = p.copy()
    return HybridAdjoint(sols, p_plus, p_minus)


def switch_time_gradient(sys: HybridSystem, traj: HybridTrajectory, adj: HybridAdjoint) -> np.ndarray:
    """``dPhi/dtau_k`` for ``k = 1..N`` (returned 0-based).

    ``l(y^-) - l(y^+) + l^k_tau + <l^k_y, F_{k-1}(y^-)> - <p^+, g_y F_{k-1}(y^-) - F_k(y^+)>``
    with ``F_j(y) = A^j y + f^j(tau_k, y)``. The fourth term is the
    state-dependence of the switching cost through ``y^-(tau_k)``.
    """
    sched = traj.schedule
    out = np.zeros(sched.N)
    for k in range(1, sched.N + 1):
        i, j = sched.modes[k - 1], sched.modes[k]
        tau = sched.times[k - 1]
        ym = traj.y_minus[k - 1]
        yp = traj.intervals[k].y_start
        Fm = sys.rhs(i, tau, ym)
        Fp = sys.rhs(j, tau, yp)
        val = sys.cost_l(tau, ym) - sys.cost_l(tau, yp)
        cost = sys.switch_costs.get((i, j))
        if cost is not None:
            val += float(cost.l_tau(tau, ym)) + float(np.dot(cost.l_y(tau, ym), Fm))
        val -= float(np.dot(adj.p_plus[k], sys.reset(i, j).g_y(ym) @ Fm - Fp))
        out[k - 1] = val
    return out


def necessary_conditions(schedule: SwitchSchedule, grads, tol: float = NC_TOL) -> GradientReport:
    """Grouped-sum first-order conditions at coincident switch times.

    For each ``k`` the group ``a(tau,k)..b(tau,k)`` collects the switches
    sharing ``tau_k``. Left sums must be ``<= 0`` and right sums ``>= 0``;
    a side is vacuous when the group touches ``0`` (left) or ``t_f`` (right),
    since the group cannot move past the fixed end points.
    """
    g = np.asarray(grads, dtype=float)
    full = schedule.full_times
    N = schedule.N
    if g.shape != (N,):
        raise ValueError("one gradient per switch time required")
    left = np.zeros(N)
    right = np.zeros(N)
    ok = np.ones(N, dtype=bool)
    for k in range(1, N + 1):
        a = min(m for m in range(0, k + 1) if full[m] == full[k])
        b = max(m for m in range(k, N + 2) if full[m] == full[k])
        left[k - 1] = g[max(a, 1) - 1: k].sum()
        right[k - 1] = g[k - 1: min(b, N)].sum()
        if a > 0 and left[k - 1] > tol:
            ok[k - 1] = False
        if b < N + 1 and right[k - 1] < -tol:
            ok[k - 1] = False
    return GradientReport(g, left, right, ok)


def mode_insertion_gradient(
    sys: HybridSystem,
    schedule: SwitchSchedule,
    y0,
    t_hat: float,
    new_mode: int,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    method: str = "RK45",
    check_samples: Optional[np.ndarray] = None,
) -> float:
    """One-sided derivative of the cost w.r.t. the length of a new interval.

    The new mode is inserted at ``t_hat`` as a zero-length interval; moving
    its closing switch to the right by ``eps`` realises the perturbation,
    so the insertion gradient is the switch-time gradient of that closing
    switch in the expanded schedule. Requires the reset composition law
    (so the zero-length detour leaves the state unchanged) and vanishing
    total insertion cost.
    """
    n = schedule.interval_of(t_hat)
    j = schedule.modes[n]
    if check_samples is None:
        check_samples = np.random.default_rng(0).normal(size=(3, sys.dim))
    sys.check_composition(sorted({j, new_mode}), check_samples)
    expanded, close = schedule.insert(t_hat, new_mode)
    traj = simulate_hybrid(sys, expanded, y0, rtol, atol, method)
    for key in ((j, new_mode), (new_mode, j)):
        c = sys.switch_costs.get(key)
        if c is not None and key[0] != key[1]:
            y = traj.y_minus[close - 2] if key == (j, new_mode) else traj.y_minus[close - 1]
            if abs(float(c.l(t_hat, y))) > 1e-12:
                raise ValueError("insertion switching costs must vanish for a finite insertion gradient")
    adj = adjoint_hybrid(sys, traj, rtol, atol, method)
    return float(switch_time_gradient(sys, traj, adj)[close - 1])


# ---------------------------------------------------------------------------
# optimization


def project_times(times, t_f: float) -> np.ndarray:
    """Euclidean projection onto ``0 <= tau_1 <= ... <= tau_N <= t_f``."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return times
    iso = isotonic_regression(times).x
    return np.clip(iso, 0.0, t_f)


@dataclass
class ScheduleReport:
    schedule: SwitchSchedule
    history: list  # accepted cost values
    outer_iterations: int
    insertions: list  # (t_hat, mode, gradient)
    reason: str


def optimize_schedule(
    sys: HybridSystem,
    schedule0: SwitchSchedule,
    y0,
    max_outer: int = 10,
    max_inner: int = 50,
    insertion_grid: int = 16,
    threshold: float = INSERTION_THRESHOLD,
    armijo_c: float = 1e-4,
    s0: float = 1.0,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    method: str = "RK45",
) -> ScheduleReport:
    """Alternate projected Armijo steps on the switch times with mode insertion.

    Insertion candidates are ``insertion_grid`` equispaced times in
    ``[0, t_f)`` and every mode differing from the active one; the most
    negative insertion gradient below ``threshold`` is inserted.
    """
    kw = dict(rtol=rtol, atol=atol, method=method)
    sched = schedule0
    traj = simulate_hybrid(sys, sched, y0, **kw)
    history = [traj.cost]
    insertions = []
    reason = "max_outer"
    outer = 0
    for outer in range(1, max_outer + 1):
        for _ in range(max_inner):
            if sched.N == 0:
                break
            g = switch_time_gradient(sys, traj, adjoint_hybrid(sys, traj, **kw))
            tau = np.array(sched.times)
            s = s0
            accepted = False
            while s > 1e-12:
                cand = project_times(tau - s * g, sched.t_f)
                if np.max(np.abs(cand - tau)) < 1e-12:
                    break
                trial = sched.with_times(cand)
                ttraj = simulate_hybrid(sys, trial, y0, **kw)
                if not ttraj.blowup and ttraj.cost <= traj.cost - armijo_c * float(g @ (tau - cand)):
                    sched, traj = trial, ttraj
                    history.append(traj.cost)
                    accepted = True
                    break
                s *= 0.5
            if not accepted:
                break
        best = (0.0, None, None)
        for t_hat in np.linspace(0.0, sched.t_f, insertion_grid, endpoint=False):
            active = sched.modes[sched.interval_of(t_hat)]
            for m in range(1, sys.n_modes + 1):
                if m == active:
                    continue
                val = mode_insertion_gradient(sys, sched, y0, float(t_hat), m, **kw)
                if val < best[0]:
                    best = (val, float(t_hat), m)
        if best[1] is None or best[0] >= threshold:
            reason = "stationary"
            break
        sched, _ = sched.insert(best[1], best[2])
        insertions.append((best[1], best[2], best[0]))
        traj = simulate_hybrid(sys, sched, y0, **kw)
    return ScheduleReport(sched, history, outer, insertions, reason)


# ---------------------------------------------------------------------------
# named discretizations


def upwind_transport(d: int, c: float = 1.0, inflow_gain: float = 2.0) -> np.ndarray:
    """First-order upwind ``y_t + c y_x = 0`` on ``d`` cells of ``(0, 1)``.

    The inflow value is ``inflow_gain`` times the outflow cell, which makes
    the semi-discrete transport unstable for gains above one.
    """
    h = 1.0 / d
    A = (np.eye(d, k=-1) - np.eye(d)) * (c / h)
    A[0, d - 1] += inflow_gain * c / h
    return A


def diffusion(d: int, nu: float = 0.1) -> np.ndarray:
    """Centred second difference ``nu y_xx`` on ``d`` interior nodes, Dirichlet."""
    h = 1.0 / (d + 1)
    return nu / h**2 * (np.eye(d, k=1) - 2 * np.eye(d) + np.eye(d, k=-1))


def transport_diffusion_example(d: int = 50, c: float = 1.0, inflow_gain: float = 2.0, nu: float = 0.1):
    """Energy-optimal switch from unstable transport (mode 1) to diffusion (mode 2).

    Returns ``(system, y0)`` with ``l = 1/2 h |y|^2`` and ``y0 = sin(pi x)``.
    """
    h = 1.0 / d
    x = (np.arange(d) + 0.5) * h
    sys = HybridSystem(
        A=[upwind_transport(d, c, inflow_gain), diffusion(d, nu)],
        running=RunningCost.quadratic(h * np.eye(d)),
    )
    return sys, np.sin(np.pi * x)
