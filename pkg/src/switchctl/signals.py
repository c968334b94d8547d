"""Switching signals, relaxed controls and sum-up rounding.

Controls live on a :class:`TimeGrid` and are piecewise constant per cell.
Modes are labelled ``1..M`` in the public API; array columns are
zero-based, so column ``j - 1`` holds mode ``j``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

# Tolerances on construction and tie detection.
SIMPLEX_TOL = 1e-12
TIE_TOL = 1e-12
MAX_EXACT_CELLS = 20


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ModeSet:
    count: int

    def __post_init__(self):
        if int(self.count) < 1:
            raise ValueError("a mode set needs at least one mode")

    @property
    def labels(self) -> range:
        return range(1, self.count + 1)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time nodes ``t_0 < ... < t_n``."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("time grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("time grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, t0: float, tf: float, n_cells: int) -> "TimeGrid":
        return cls(np.linspace(t0, tf, int(n_cells) + 1))

    @classmethod
    def with_step(cls, t0: float, tf: float, dt: float) -> "TimeGrid":
        """Uniform grid whose step divides ``tf - t0`` (rounded to the nearest count)."""
        n = max(1, int(round((tf - t0) / dt)))
        return cls.uniform(t0, tf, n)

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def max_step(self) -> float:
        return float(self.widths.max())

    @property
    def t0(self) -> float:
        return float(self.nodes[0])

    @property
    def tf(self) -> float:
        return float(self.nodes[-1])

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def refine(self) -> "TimeGrid":
        """Halve every cell."""
        out = np.empty(2 * self.n_cells + 1)
        out[0::2] = self.nodes
        out[1::2] = self.midpoints
        return TimeGrid(out)

    def locate(self, t) -> np.ndarray:
        """Index of the cell ``[t_k, t_{k+1})`` containing ``t``; ``t_n`` maps to the last cell."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.nodes, t, side="right") - 1
        return np.clip(k, 0, self.n_cells - 1)

    def same_as(self, other: "TimeGrid") -> bool:
        return self.nodes.shape == other.nodes.shape and bool(np.all(self.nodes == other.nodes))

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and self.same_as(other)

    def __hash__(self):
        return hash(self.nodes.tobytes())


class _CellControl:
    grid: TimeGrid
    values: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.values.shape[1]

    def cumulative(self) -> np.ndarray:
        """Exact integrals ``int_{t_0}^{t_k}`` per mode at every grid node, shape ``(n+1, M)``."""
        areas = self.values * self.grid.widths[:, None]
        out = np.zeros((self.grid.n_cells + 1, self.n_modes))
        np.cumsum(areas, axis=0, out=out[1:])
        return out

    def integral_at(self, t) -> np.ndarray:
        """Exact integral from ``t_0`` to each time in ``t``; shape ``(len(t), M)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < self.grid.t0 - 1e-12) or np.any(t > self.grid.tf + 1e-12):
            raise ValueError("integration limit outside the control horizon")
        k = self.grid.locate(t)
        cum = self.cumulative()
        return cum[k] + (t - self.grid.nodes[k])[:, None] * self.values[k]

    def __call__(self, t) -> np.ndarray:
        return self.values[self.grid.locate(t)]


@dataclass(frozen=True, eq=False)
class RelaxedControl(_CellControl):
    """Per-cell weights on the probability simplex."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.grid.n_cells:
            raise ValueError(
                f"expected {self.grid.n_cells} rows of weights, got {vals.shape[0]}"
            )
        if np.any(vals < -SIMPLEX_TOL) or np.any(np.abs(vals.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise ValueError("relaxed control weights must lie on the simplex")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_scalar(cls, grid: TimeGrid, beta) -> "RelaxedControl":
        """Two-mode control from the weight of mode 1, ``(beta, 1 - beta)``."""
        b = np.broadcast_to(np.asarray(beta, dtype=float), (grid.n_cells,))
        return cls(grid, np.column_stack([b, 1.0 - b]))


@dataclass(frozen=True, eq=False)
class BinaryControl(_CellControl):
    """Per-cell one-hot mode indicators."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, copy=True)
        if vals.ndim != 2 or vals.shape[0] != self.grid.n_cells:
            raise ValueError("binary control needs one row per grid cell")
        if not np.all((vals == 0) | (vals == 1)):
            raise ValueError("binary control entries must be 0 or 1")
        if np.any(vals.sum(axis=1) != 1):
            raise ValueError("exactly one mode must be active per cell")
        vals = vals.astype(np.int64)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_modes(cls, grid: TimeGrid, modes: Sequence[int], n_modes: Optional[int] = None):
        modes = np.asarray(modes, dtype=np.int64)
        m = int(n_modes if n_modes is not None else modes.max())
        if np.any(modes < 1) or np.any(modes > m):
            raise ValueError("mode labels must lie in 1..M")
        vals = np.zeros((modes.size, m), dtype=np.int64)
        vals[np.arange(modes.size), modes - 1] = 1
        return cls(grid, vals)

    @property
    def active(self) -> np.ndarray:
        """Active mode label per cell (1-based)."""
        return np.argmax(self.values, axis=1) + 1

    def as_relaxed(self) -> RelaxedControl:
        return RelaxedControl(self.grid, self.values.astype(float))


@dataclass(frozen=True, eq=False)
class SwitchingSignal:
    """Piecewise-constant mode signal ``sigma(t) = modes[k]`` on ``[tau_k, tau_{k+1})``.

    Equal consecutive switch times (empty intervals) are allowed.
    """

    switch_times: np.ndarray
    modes: np.ndarray
    t_end: float

    def __post_init__(self):
        tau = _frozen(self.switch_times)
        modes = _frozen(self.modes, dtype=np.int64)
        if tau.ndim != 1 or tau.size == 0:
            raise ValueError("a switching signal needs at least one interval")
        if tau.size != modes.size:
            raise ValueError("switch_times and modes must have equal length")
        if np.any(np.diff(tau) < 0):
            raise ValueError("switch times must be nondecreasing")
        if np.any(modes < 1):
            raise ValueError("mode labels start at 1")
        if not float(self.t_end) >= tau[-1]:
            raise ValueError("signal horizon ends before its last switch")
        object.__setattr__(self, "switch_times", tau)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "t_end", float(self.t_end))

    @property
    def t_start(self) -> float:
        return float(self.switch_times[0])

    @property
    def n_switches(self) -> int:
        return self.modes.size - 1

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < self.t_start) or np.any(t_arr > self.t_end):
            raise ValueError("switching signal evaluated outside its horizon")
        k = np.searchsorted(self.switch_times, t_arr, side="right") - 1
        out = self.modes[k]
        return int(out) if out.ndim == 0 else out

    def normalized(self) -> "SwitchingSignal":
        """Drop empty intervals and merge equal neighbours."""
        ends = np.append(self.switch_times[1:], self.t_end)
        keep = ends > self.switch_times
        if not keep.any():
            keep[-1] = True
        tau, modes = self.switch_times[keep], self.modes[keep]
        new = np.r_[True, modes[1:] != modes[:-1]]
        tau, modes = tau[new].copy(), modes[new]
        tau[0] = self.t_start
        return SwitchingSignal(tau, modes, self.t_end)

    def breakpoints(self) -> np.ndarray:
        return np.append(self.switch_times, self.t_end)


@dataclass(frozen=True, eq=False)
class SwitchCountMatrix:
    """Entry ``(i-1, k-1)`` counts transitions from mode ``i`` to mode ``k``."""

    counts: np.ndarray

    def __post_init__(self):
        c = _frozen(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("switch counts must form a square matrix")
        if np.any(np.diag(c) != 0):
            raise ValueError("self-transitions are not switches")
        object.__setattr__(self, "counts", c)

    def __getitem__(self, key):
        i, k = key
        return int(self.counts[i - 1, k - 1])


# ---------------------------------------------------------------------------
# rounding


def _cell_integrals(beta: RelaxedControl, grid: TimeGrid) -> np.ndarray:
    if abs(grid.t0 - beta.grid.t0) > 1e-12 or abs(grid.tf - beta.grid.tf) > 1e-12:
        raise ValueError("rounding grid must span the relaxed control's horizon")
    if grid.same_as(beta.grid):
        return beta.cumulative()
    return beta.integral_at(grid.nodes)


def sum_up_round(beta: RelaxedControl, grid: Optional[TimeGrid] = None) -> BinaryControl:
    """Sum-up rounding of a relaxed control.

    On every cell the mode with the largest accumulated deficit
    ``int_0^{t_{k+1}} beta_j - int_0^{t_k} alpha_j`` becomes active; ties go to
    the smallest mode label.

    Parameters
    ----------
    beta : RelaxedControl
        Relaxed control to round.
    grid : TimeGrid, optional
        Rounding grid spanning the same horizon. Defaults to ``beta.grid``;
        the integrals of ``beta`` are then taken exactly on the new nodes.
    """
    grid = beta.grid if grid is None else grid
    cum = _cell_integrals(beta, grid)
    widths = grid.widths
    m = beta.n_modes
    alpha = np.zeros((grid.n_cells, m), dtype=np.int64)
    used = np.zeros(m)
    for k in range(grid.n_cells):
        deficit = cum[k + 1] - used
        j = int(np.flatnonzero(deficit >= deficit.max() - TIE_TOL)[0])
        alpha[k, j] = 1
        used[j] += widths[k]
    return BinaryControl(grid, alpha)


def to_switching_signal(alpha: BinaryControl) -> SwitchingSignal:
    active = alpha.active
    starts = np.flatnonzero(np.r_[True, active[1:] != active[:-1]])
    return SwitchingSignal(alpha.grid.nodes[starts], active[starts], alpha.grid.tf)


def integrated_deviation(alpha: BinaryControl, beta: RelaxedControl) -> float:
    """``max_j max_t |int_0^t (alpha_j - beta_j)|``, evaluated exactly.

    Both integrands are piecewise constant, so the integrated difference is
    piecewise linear and its extrema sit on grid nodes.
    """
    if alpha.n_modes != beta.n_modes:
        raise ValueError("controls have different mode counts")
    if alpha.grid.same_as(beta.grid):
        diff = alpha.cumulative() - beta.cumulative()
    else:
        ga, gb = alpha.grid, beta.grid
        if abs(ga.t0 - gb.t0) > 1e-12 or abs(ga.tf - gb.tf) > 1e-12:
            raise ValueError("controls live on grids with different horizons")
        nodes = np.union1d(ga.nodes, gb.nodes)
        nodes = nodes[(nodes >= ga.t0) & (nodes <= ga.tf)]
        diff = alpha.integral_at(nodes) - beta.integral_at(nodes)
    return float(np.abs(diff).max())


def sur_bound(beta: RelaxedControl, grid: Optional[TimeGrid] = None) -> float:
    """The a-priori deviation bound ``(M - 1) * max cell width``."""
    grid = beta.grid if grid is None else grid
    return (beta.n_modes - 1) * grid.max_step


def count_switches(sigma: SwitchingSignal, n_modes: Optional[int] = None) -> SwitchCountMatrix:
    modes = sigma.normalized().modes
    m = int(n_modes if n_modes is not None else modes.max())
    counts = np.zeros((m, m), dtype=np.int64)
    for a, b in zip(modes[:-1], modes[1:]):
        counts[a - 1, b - 1] += 1
    return SwitchCountMatrix(counts)


def _check_limits(limits, m: int) -> np.ndarray:
    if isinstance(limits, SwitchCountMatrix):
        limits = limits.counts
    lim = np.array(limits, dtype=float)
    if lim.shape != (m, m):
        raise ValueError(f"switch limits must be a {m}x{m} matrix, got shape {lim.shape}")
    if np.any(np.isnan(lim)) or np.any(lim < 0):
        raise ValueError("switch limits must be nonnegative (use inf for unbounded)")
    return lim


def constrained_round(
    beta: RelaxedControl,
    limits,
    grid: Optional[TimeGrid] = None,
    max_cells: int = MAX_EXACT_CELLS,
) -> BinaryControl:
    """Min-max rounding under switch-count limits, solved exactly.

    Minimises ``max_j max_t |int_0^t (alpha_j - beta_j)|`` over binary controls
    whose transition counts respect ``limits`` (``M x M``, ``inf`` = unbounded,
    diagonal ignored). Depth-first branch-and-bound in lexicographic mode
    order; the running deviation is a valid lower bound because the max over
    nodes can only grow as cells are fixed. Among optima the lexicographically
    smallest mode sequence is returned.
    """
    grid = beta.grid if grid is None else grid
    n, m = grid.n_cells, beta.n_modes
    if n > max_cells:
        raise ValueError(f"exact min-max rounding is limited to {max_cells} cells, got {n}")
    lim = _check_limits(limits, m)
    cum = _cell_integrals(beta, grid)
    inc = np.diff(cum, axis=0)
    widths = grid.widths

    def objective(modes) -> float:
        d = np.zeros(m)
        worst = 0.0
        for k, j in enumerate(modes):
            d = d - inc[k]
            d[j] += widths[k]
            worst = max(worst, float(np.abs(d).max()))
        return worst

    def feasible(modes) -> bool:
        c = np.zeros((m, m))
        for a, b in zip(modes[:-1], modes[1:]):
            if a != b:
                c[a, b] += 1
        return bool(np.all(c <= lim + 0.5))

    # incumbent: SUR (if admissible) and every constant control
    candidates = [[j] * n for j in range(m)]
    sur = list(sum_up_round(beta, grid).active - 1)
    if feasible(sur):
        candidates.append(sur)
    best = min(objective(c) for c in candidates) + 1e-9
    best_modes: Optional[list] = None

    counts = np.zeros((m, m))
    chosen: list = []

    def dfs(k: int, d: np.ndarray, worst: float):
        nonlocal best, best_modes
        if k == n:
            best, best_modes = worst - TIE_TOL, list(chosen)
            return
        base = d - inc[k]
        prev = chosen[-1] if chosen else None
        for j in range(m):
            if prev is not None and prev != j and counts[prev, j] + 1 > lim[prev, j] + 0.5:
                continue
            nd = base.copy()
            nd[j] += widths[k]
            w = max(worst, float(np.abs(nd).max()))
            if w >= best:
                continue
            if prev is not None and prev != j:
                counts[prev, j] += 1
            chosen.append(j)
            dfs(k + 1, nd, w)
            chosen.pop()
            if prev is not None and prev != j:
                counts[prev, j] -= 1

    dfs(0, np.zeros(m), 0.0)
    if best_modes is None:  # pragma: no cover - incumbents are always re-found
        raise RuntimeError("min-max rounding search found no admissible control")
    return BinaryControl.from_modes(grid, np.array(best_modes) + 1, m)


# ---------------------------------------------------------------------------
# random signals


def random_signal(
    rng: np.random.Generator,
    t_end: float,
    n_modes: int = 2,
    dwell: tuple = (0.2, 2.0),
    quantum: Optional[float] = None,
) -> SwitchingSignal:
    """Random signal with uniform dwell times; every switch changes the mode.

    With ``quantum`` set, dwell times are rounded to positive multiples of it.
    """
    lo, hi = dwell
    times = [0.0]
    modes = [int(rng.integers(1, n_modes + 1))]
    t = 0.0
    while True:
        d = float(rng.uniform(lo, hi))
        if quantum:
            d = max(1, int(round(d / quantum))) * quantum
        t += d
        if t >= t_end:
            break
        times.append(t)
        if n_modes == 1:
            modes.append(modes[-1])
        else:
            nxt = int(rng.integers(1, n_modes))
            modes.append(nxt if nxt < modes[-1] else nxt + 1)
    return SwitchingSignal(np.array(times), np.array(modes), t_end)


# ---------------------------------------------------------------------------
# CSV


def _fmt(x) -> str:
    return repr(float(x)) if not isinstance(x, (int, np.integer)) else str(int(x))


def control_to_csv(control: Union[RelaxedControl, BinaryControl], path=None) -> str:
    """Serialize one row per cell: ``t_start, t_end, <prefix>_1..<prefix>_M``."""
    prefix = "alpha" if isinstance(control, BinaryControl) else "beta"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_start", "t_end"] + [f"{prefix}_{j}" for j in range(1, control.n_modes + 1)])
    nodes = control.grid.nodes
    for k in range(control.grid.n_cells):
        w.writerow([_fmt(nodes[k]), _fmt(nodes[k + 1])] + [_fmt(v) for v in control.values[k]])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def parse_control_csv(text: str) -> Union[RelaxedControl, BinaryControl]:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    header, body = rows[0], rows[1:]
    if header[:2] != ["t_start", "t_end"]:
        raise ValueError("control CSV must start with t_start,t_end columns")
    data = np.array(body, dtype=float)
    if np.any(data[1:, 0] != data[:-1, 1]):
        raise ValueError("control CSV cells are not contiguous")
    grid = TimeGrid(np.append(data[:, 0], data[-1, 1]))
    if header[2].startswith("alpha"):
        return BinaryControl(grid, data[:, 2:].astype(np.int64))
    return RelaxedControl(grid, data[:, 2:])


def control_from_csv(path) -> Union[RelaxedControl, BinaryControl]:
    return parse_control_csv(Path(path).read_text(encoding="utf-8"))
