"""Switched semilinear 1D transport systems.

The model is ``y_t + Lambda^sigma(x) y_x = B^sigma y`` on ``[a, b]`` with
diagonal speeds, ``m`` negative and ``n - m`` positive, and reflecting
boundary conditions ``y_II(a) = G_L y_I(a)``, ``y_I(b) = G_R y_II(b)``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .signals import SwitchingSignal

SpeedSpec = Union[Sequence[float], np.ndarray, Callable[[np.ndarray], np.ndarray]]

POWER_TOL = 1e-12
POWER_MAX_ITER = 5_000


def _as_matrix(a, shape, name):
    arr = np.atleast_2d(np.asarray(a, dtype=float))
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class TransportSystem:
    """Data of a switched diagonal hyperbolic system, one entry per mode.

    ``speeds[j]`` is either the constant diagonal of ``Lambda^{j+1}`` or a
    callable mapping an array of positions to an ``(n, len(x))`` array.
    """

    interval: tuple
    n: int
    m: int
    speeds: tuple
    coupling: tuple = ()
    G_L: tuple = ()
    G_R: tuple = ()

    def __post_init__(self):
        a, b = map(float, self.interval)
        if not b > a:
            raise ValueError("interval must satisfy a < b")
        n, m = int(self.n), int(self.m)
        if not 1 <= m <= n:
            raise ValueError("need 1 <= m <= n")
        M = len(self.speeds)
        if M == 0:
            raise ValueError("at least one mode is required")
        coupling = self.coupling or tuple(np.zeros((n, n)) for _ in range(M))
        gl = self.G_L or tuple(np.zeros((n - m, m)) for _ in range(M))
        gr = self.G_R or tuple(np.zeros((m, n - m)) for _ in range(M))
        if not (len(coupling) == len(gl) == len(gr) == M):
            raise ValueError("every mode needs speeds, coupling and boundary matrices")
        speeds = []
        for s in self.speeds:
            if callable(s):
                speeds.append(s)
            else:
                arr = np.asarray(s, dtype=float).ravel()
                if arr.size != n:
                    raise ValueError(f"constant speeds need {n} entries")
                speeds.append(arr)
        object.__setattr__(self, "interval", (a, b))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "speeds", tuple(speeds))
        object.__setattr__(self, "coupling", tuple(_as_matrix(c, (n, n), "coupling") for c in coupling))
        object.__setattr__(self, "G_L", tuple(_as_matrix(g, (n - m, m), "G_L") for g in gl))
        object.__setattr__(self, "G_R", tuple(_as_matrix(g, (m, n - m), "G_R") for g in gr))

    @property
    def n_modes(self) -> int:
        return len(self.speeds)

    def speeds_at(self, mode: int, x) -> np.ndarray:
        """Diagonal of ``Lambda^mode`` at positions ``x``, shape ``(n, len(x))``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        s = self.speeds[mode - 1]
        if callable(s):
            out = np.asarray(s(x), dtype=float)
            if out.shape == (x.size, self.n):
                out = out.T
            return np.broadcast_to(out, (self.n, x.size)).copy()
        return np.repeat(s[:, None], x.size, axis=1)

    def max_speed(self, sample_count: int = 201) -> float:
        x = np.linspace(*self.interval, sample_count)
        return max(float(np.abs(self.speeds_at(j, x)).max()) for j in range(1, self.n_modes + 1))


@dataclass(frozen=True, eq=False)
class StateField:
    x: np.ndarray
    values: np.ndarray  # (n, N_x + 1)
    t: float = 0.0

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.shape[1] != np.size(self.x) or v.shape[1] < 3:
            raise ValueError("state needs one column per node and N_x >= 2")
        if not np.all(np.isfinite(v)):
            raise ValueError("state values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    states: np.ndarray  # (len(times), n, N_x + 1)
    signal: Optional[SwitchingSignal] = None

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def snapshot(self, i: int) -> StateField:
        return StateField(self.x, self.states[i], float(self.times[i]))

    def __len__(self):
        return len(self.times)


@dataclass(frozen=True)
class StabilityCertificate:
    rho_max: float
    passes: bool
    radii: np.ndarray  # radii[j-1, j'-1] for G_L^j and G_R^j'
    product_max: float  # max_{j,j'} rho(|G_R^j'| |G_L^j|)
    coupling_norms: tuple = ()
    method: str = "power"

    def to_json(self) -> str:
        return json.dumps(
            {
                "rho_max": self.rho_max,
                "passes": self.passes,
                "product_max": self.product_max,
                "radii": self.radii.tolist(),
                "coupling_inf_norms": list(self.coupling_norms),
                "method": self.method,
            },
            indent=2,
            sort_keys=True,
        ) + "\n"


@dataclass(frozen=True)
class DecayFit:
    K_fit: float
    mu_fit: float
    residual: float
    y0_norm: float

    def envelope(self, t) -> np.ndarray:
        return self.K_fit * self.y0_norm * np.exp(-self.mu_fit * np.asarray(t, dtype=float))


# ---------------------------------------------------------------------------
# certificates


def check_hyperbolicity(sys: TransportSystem, sample_count: int = 101):
    """Strict ordering ``lambda_1 < .. < lambda_m < 0 < lambda_{m+1} < .. < lambda_n``.

    Returns ``(ok, violation)``; ``violation`` is ``None`` or a dict naming the
    first offending mode and position.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be at least 2")
    x = np.linspace(*sys.interval, sample_count)
    for j in range(1, sys.n_modes + 1):
        lam = sys.speeds_at(j, x)
        ok = np.all(np.diff(lam, axis=0) > 0, axis=0)
        ok &= lam[sys.m - 1] < 0
        if sys.m < sys.n:
            ok &= lam[sys.m] > 0
        if not ok.all():
            i = int(np.flatnonzero(~ok)[0])
            return False, {"mode": j, "x": float(x[i]), "speeds": lam[:, i].tolist()}
    return True, None


def perron_radius(mat: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER):
    """Spectral radius of an entrywise nonnegative matrix.

    Power iteration on ``I + A`` with Collatz-Wielandt bounds
    ``min_i (Ax)_i/x_i <= rho(A) <= max_i (Ax)_i/x_i``; stops when the bracket
    is narrower than ``tol``. Returns ``(rho, converged)``; when the bracket
    does not close the upper bound is returned.
    """
    A = np.abs(np.asarray(mat, dtype=float))
    k = A.shape[0]
    if not A.any():
        return 0.0, True
    x = np.ones(k)
    hi = np.inf
    for _ in range(max_iter):
        Ax = A @ x
        ratio = Ax / x
        lo, hi = ratio.min(), ratio.max()
        if hi - lo <= tol * max(1.0, hi):
            return float(0.5 * (lo + hi)), True
        x = x + Ax
        x /= x.max()
    return float(hi), False


def spectral_radius_condition(sys: TransportSystem, tol: float = POWER_TOL) -> StabilityCertificate:
    """Reflection certificate ``max_{j,j'} rho([[0, |G_R^j'|], [|G_L^j|, 0]]) < 1``."""
    M, m, n = sys.n_modes, sys.m, sys.n
    if n == m:
        raise ValueError("boundary coupling needs both negative and positive speeds")
    radii = np.zeros((M, M))
    products = np.zeros((M, M))
    method = "power"
    scalar = m == 1 and n - m == 1
    for j in range(M):
        for jp in range(M):
            gl, gr = np.abs(sys.G_L[j]), np.abs(sys.G_R[jp])
            if scalar:
                prod = float(gr[0, 0] * gl[0, 0])
                products[j, jp] = prod
                radii[j, jp] = np.sqrt(prod)
                method = "closed-form"
                continue
            block = np.zeros((n, n))
            block[:m, m:] = gr
            block[m:, :m] = gl
            rho, converged = perron_radius(block, tol)
            if not converged:
                rho = float(np.abs(np.linalg.eigvals(block)).max())
                method = "power+eig"
            radii[j, jp] = rho
            products[j, jp] = rho * rho
    rho_max = float(radii.max())
    norms = tuple(float(np.abs(c).sum(axis=1).max()) for c in sys.coupling)
    return StabilityCertificate(rho_max, rho_max < 1.0, radii, float(products.max()), norms, method)


def commutativity_check(system_or_matrices, sample_count: int = 101, atol: float = 1e-12) -> bool:
    """Whether all mode pairs of speed matrices commute at sampled positions.

    Accepts a :class:`TransportSystem` (diagonal, so always true) or a list of
    ``n x n`` matrices / callables ``x -> matrix``.
    """
    if isinstance(system_or_matrices, TransportSystem):
        sys = system_or_matrices
        x = np.linspace(*sys.interval, sample_count)
        mats = [lambda xi, j=j: np.diag(sys.speeds_at(j, xi)[:, 0]) for j in range(1, sys.n_modes + 1)]
    else:
        x = np.linspace(0.0, 1.0, sample_count)
        mats = [m if callable(m) else (lambda xi, m=np.asarray(m, float): m) for m in system_or_matrices]
    for xi in x:
        vals = [np.asarray(f(xi), dtype=float) for f in mats]
        for i in range(len(vals)):
            for k in range(i + 1, len(vals)):
                if not np.allclose(vals[i] @ vals[k], vals[k] @ vals[i], atol=atol, rtol=0):
                    return False
    return True


# ---------------------------------------------------------------------------
# simulation


def _stop_times(signals: Sequence[SwitchingSignal], t_f: float, output_times) -> np.ndarray:
    stops = [np.asarray(output_times, dtype=float), [t_f]]
    for s in signals:
        if s.t_start > 0 or s.t_end < t_f:
            raise ValueError("switching signal undefined on part of [0, t_f]")
        stops.append(s.switch_times)
    stops = np.unique(np.concatenate(stops))
    return stops[(stops > 0) & (stops <= t_f)]


def _initial_values(y0, x, n):
    if isinstance(y0, StateField):
        vals = y0.values
    elif callable(y0):
        vals = np.atleast_2d(np.asarray(y0(x), dtype=float))
        if vals.shape == (x.size, n):
            vals = vals.T
    else:
        vals = np.atleast_2d(np.asarray(y0, dtype=float))
    vals = np.broadcast_to(vals, (n, x.size)).astype(float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("initial state must be finite")
    return vals


def simulate_ensemble(
    sys: TransportSystem,
    signals: Sequence[SwitchingSignal],
    y0,
    t_f: float,
    N_x: int,
    cfl: float = 0.9,
    output_times=None,
) -> list:
    """Simulate several signals at once on a shared step sequence.

    Steps land on every switch time of every signal and on every output time.
    With a single signal this is exactly :func:`simulate`.
    """
    ok, bad = check_hyperbolicity(sys)
    if not ok:
        raise ValueError(f"system is not strictly hyperbolic: {bad}")
    if not 0 < cfl <= 1:
        raise ValueError("cfl must lie in (0, 1]")
    N_x = int(N_x)
    if N_x < 2:
        raise ValueError("need at least two cells")
    a, b = sys.interval
    x = np.linspace(a, b, N_x + 1)
    dx = (b - a) / N_x
    xh = 0.5 * (x[1:] + x[:-1])
    n, m = sys.n, sys.m
    M = sys.n_modes
    lam = np.stack([sys.speeds_at(j, x) for j in range(1, M + 1)])
    lam_h = np.stack([sys.speeds_at(j, xh) for j in range(1, M + 1)])
    Bm = np.stack(sys.coupling)
    GL = np.stack(sys.G_L)
    GR = np.stack(sys.G_R)
    dt_max = cfl * dx / max(float(np.abs(lam).max()), float(np.abs(lam_h).max()))

    if output_times is None:
        output_times = np.array([], dtype=float)
        record_all = True
    else:
        output_times = np.asarray(output_times, dtype=float)
        record_all = False
    stops = _stop_times(signals, t_f, output_times)
    keep = set(np.round(output_times, 12).tolist())

    S = len(signals)
    Y = np.repeat(_initial_values(y0, x, n)[None], S, axis=0)
    times, snaps = [0.0], [Y.copy()]
    t = 0.0
    for stop in stops:
        k = max(1, int(np.ceil((stop - t) / dt_max - 1e-9)))
        dt = (stop - t) / k
        idx = np.array([s(t) for s in signals]) - 1
        L, Lh, B = lam[idx], lam_h[idx], Bm[idx]
        gl, gr = GL[idx], GR[idx]
        r = dt / dx
        for _ in range(k):
            Y = _richtmyer_step(Y, L, Lh, B, gl, gr, r, dt, m)
        t = float(stop)
        if record_all or round(t, 12) in keep:
            times.append(t)
            snaps.append(Y.copy())
    times = np.array(times)
    states = np.stack(snaps, axis=1)
    if not record_all:
        sel = np.isin(np.round(times, 12), np.round(np.r_[0.0, output_times], 12))
        times, states = times[sel], states[:, sel]
    return [Trajectory(times, x, states[s], signals[s]) for s in range(S)]


def _richtmyer_step(Y, L, Lh, B, gl, gr, r, dt, m):
    # half step on staggered midpoints
    avg = 0.5 * (Y[..., 1:] + Y[..., :-1])
    Yh = avg - 0.5 * r * Lh * (Y[..., 1:] - Y[..., :-1]) + 0.5 * dt * np.einsum("sij,sjx->six", B, avg)
    new = np.empty_like(Y)
    new[..., 1:-1] = (
        Y[..., 1:-1]
        - r * L[..., 1:-1] * (Yh[..., 1:] - Yh[..., :-1])
        + dt * np.einsum("sij,sjx->six", B, 0.5 * (Yh[..., 1:] + Yh[..., :-1]))
    )
    # outgoing traces by first-order upwinding, then the reflections
    y_a, y_b = Y[..., 0], Y[..., -1]
    out_a = y_a[:, :m] - r * L[:, :m, 0] * (Y[:, :m, 1] - y_a[:, :m]) + dt * np.einsum("sij,sj->si", B, y_a)[:, :m]
    out_b = y_b[:, m:] - r * L[:, m:, -1] * (y_b[:, m:] - Y[:, m:, -2]) + dt * np.einsum("sij,sj->si", B, y_b)[:, m:]
    new[:, :m, 0] = out_a
    new[:, m:, 0] = np.einsum("sij,sj->si", gl, out_a)
    new[:, m:, -1] = out_b
    new[:, :m, -1] = np.einsum("sij,sj->si", gr, out_b)
    return new


def simulate(
    sys: TransportSystem,
    sigma: SwitchingSignal,
    y0,
    t_f: float,
    N_x: int,
    cfl: float = 0.9,
    output_times=None,
) -> Trajectory:
    """Two-step Lax-Friedrichs (Richtmyer) solution of the switched system.

    The time step is ``cfl * dx / max|lambda|``, shortened so that steps land
    exactly on every switch time and requested output time. Interior nodes
    are updated first; the outgoing trace at each boundary is advanced by
    first-order upwinding and the incoming components are then set by the
    reflection matrices of the active mode.

    Parameters
    ----------
    y0 : StateField, array ``(n, N_x + 1)`` or callable ``x -> (n, len(x))``
    output_times : array, optional
        Times to store. By default every step is stored.
    """
    return simulate_ensemble(sys, [sigma], y0, t_f, N_x, cfl, output_times)[0]


def sup_norm_series(traj: Trajectory):
    """``(t, max_{x, i} |y_i(t, x)|)`` per stored snapshot."""
    return traj.times.copy(), np.abs(traj.states).max(axis=(1, 2))


def fit_decay(series, y0_norm: Optional[float] = None) -> DecayFit:
    """Exponential envelope ``K e^{-mu t} ||y0||`` of a norm series.

    The series is replaced by its running maximum from the right (a
    non-increasing envelope), a least-squares line is fitted to its logarithm
    and the intercept is then raised just enough for the envelope to
    dominate every sample.
    """
    t, v = (np.asarray(a, dtype=float) for a in series)
    if t.size < 3:
        raise ValueError("need at least three samples")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("norm values must be positive")
    env = np.maximum.accumulate(v[::-1])[::-1]
    logs = np.log(env)
    A = np.column_stack([np.ones_like(t), t])
    (c, slope), *_ = np.linalg.lstsq(A, logs, rcond=None)
    mu = -slope
    res = logs - (c - mu * t)
    c_dom = c + max(0.0, float(res.max()))
    norm0 = float(v[0]) if y0_norm is None else float(y0_norm)
    return DecayFit(float(np.exp(c_dom) / norm0), float(mu), float(np.sqrt(np.mean(res**2))), norm0)


# ---------------------------------------------------------------------------
# paper data and export


def exsim_system() -> TransportSystem:
    """The two-mode, two-component benchmark with reflection data
    ``G_L in {0.61, 0.42}``, ``G_R in {1.15, 1.21}``."""
    return TransportSystem(
        interval=(0.0, 1.0),
        n=2,
        m=1,
        speeds=([-1.2, 1.8], [-0.8, 1.4]),
        coupling=(np.diag([-0.005, -0.005]), np.array([[0.0, 0.005], [0.005, 0.0]])),
        G_L=([[0.61]], [[0.42]]),
        G_R=([[1.15]], [[1.21]]),
    )


def sine_bump(x: np.ndarray, n: int = 2) -> np.ndarray:
    return np.tile(np.sin(np.pi * x), (n, 1))


def trajectory_to_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = traj.states.shape[1]
    w.writerow(["t", "x"] + [f"y_{i}" for i in range(1, n + 1)])
    for ti, state in zip(traj.times, traj.states):
        for xi, col in zip(traj.x, state.T):
            w.writerow([repr(float(ti)), repr(float(xi))] + [repr(float(v)) for v in col])
    return buf.getvalue()


def series_to_csv(t, values, header=("t", "norm")) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for a, b in zip(t, values):
        w.writerow([repr(float(a)), repr(float(b))])
    return buf.getvalue()
