"""Independent reference computations shared by the unit and acceptance tests.

Everything here is built from forward solves only (finite differences,
brute force); none of it touches the adjoint code under test.
"""

import numpy as np

from switchctl.hybrid import HybridSystem, Reset, RunningCost, SwitchCost, SwitchSchedule, reduced_cost
from switchctl.miocp import objective

TIGHT = dict(rtol=1e-12, atol=1e-14, method="DOP853")


def fd_switch_gradient(sys, sched, y0, k, h=1e-5, **kw):
    """Central difference of the reduced cost in the k-th (1-based) switch time."""
    kw = {**TIGHT, **kw}
    tau = np.array(sched.times)
    up, dn = tau.copy(), tau.copy()
    up[k - 1] += h
    dn[k - 1] -= h
    return (reduced_cost(sys, sched.with_times(up), y0, **kw) - reduced_cost(sys, sched.with_times(dn), y0, **kw)) / (2 * h)


def fd_insertion(sys, sched, y0, t_hat, mode, h=1e-6, **kw):
    """One-sided quotient of inserting ``mode`` on ``[t_hat, t_hat + h]``.

    The truncation error is O(h) and the round-off about tol/h; under the tight
    integrator tolerances h = 1e-6 keeps both small.
    """
    kw = {**TIGHT, **kw}
    expanded, close = sched.insert(t_hat, mode)
    tau = np.array(expanded.times)
    tau[close - 1] += h
    return (reduced_cost(sys, expanded.with_times(tau), y0, **kw) - reduced_cost(sys, sched, y0, **kw)) / h


def random_hybrid(rng, dim=None, n_modes=2, with_costs=True, composable=False):
    """Random smooth instance: linear plus bounded cubic perturbations,
    affine resets, quadratic running and switching costs."""
    dim = dim or int(rng.integers(2, 9))
    A = [rng.normal(scale=0.6, size=(dim, dim)) - 0.3 * np.eye(dim) for _ in range(n_modes)]
    f, f_y = {}, {}
    for j in range(1, n_modes + 1):
        B = rng.normal(scale=0.2, size=(dim, dim))
        eps = float(rng.uniform(0.05, 0.2))
        w = rng.normal(size=dim)
        f[j] = lambda t, y, B=B, eps=eps, w=w: B @ y - eps * np.tanh(y) ** 3 + 0.1 * np.sin(t) * w
        f_y[j] = lambda t, y, B=B, eps=eps: B - np.diag(3 * eps * np.tanh(y) ** 2 * (1 - np.tanh(y) ** 2))
    resets = {}
    if composable:
        # g^{i,j} = T_j T_i^{-1} satisfies the composition law
        T = [np.eye(dim) + rng.normal(scale=0.2, size=(dim, dim)) for _ in range(n_modes)]
        for i in range(n_modes):
            for j in range(n_modes):
                resets[(i + 1, j + 1)] = Reset.affine(T[j] @ np.linalg.inv(T[i]))
    else:
        for i in range(1, n_modes + 1):
            for j in range(1, n_modes + 1):
                if i != j:
                    resets[(i, j)] = Reset.affine(np.eye(dim) + rng.normal(scale=0.2, size=(dim, dim)),
                                                  rng.normal(scale=0.1, size=dim))
    Q = rng.normal(size=(dim, dim))
    running = RunningCost.quadratic(Q @ Q.T / dim + np.eye(dim))
    costs = {}
    if with_costs:
        for i in range(1, n_modes + 1):
            for j in range(1, n_modes + 1):
                if i != j:
                    S = rng.normal(size=(dim, dim))
                    S = S @ S.T / dim
                    c = float(rng.uniform(0.1, 1.0))
                    costs[(i, j)] = SwitchCost(
                        lambda t, y, S=S, c=c: c * t + 0.5 * y @ S @ y,
                        lambda t, y, c=c: c,
                        lambda t, y, S=S: S @ y,
                    )
    sys = HybridSystem(A=A, f=f, f_y=f_y, resets=resets, switch_costs=costs, running=running)
    return sys, rng.normal(size=dim)


def random_schedule(rng, n_modes, n_switch, t_f=1.0, min_gap=0.05):
    while True:
        times = np.sort(rng.uniform(0.05, t_f - 0.05, n_switch))
        if np.all(np.diff(times) > min_gap):
            break
    modes = [int(rng.integers(1, n_modes + 1))]
    for _ in range(n_switch):
        modes.append(int(rng.choice([m for m in range(1, n_modes + 1) if m != modes[-1]])))
    return SwitchSchedule(tuple(modes), tuple(times), t_f)


def relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def fd_control_gradient(problem, grid, beta, cell, h=1e-5):
    """Central difference of the discrete tracking cost in one control cell."""
    e = np.zeros(len(beta))
    e[cell] = h
    return (objective(problem, grid, beta + e) - objective(problem, grid, beta - e)) / (2 * h)


def brute_value(lam, t_f, n):
    """Enumerate every bang-bang signal on n cells by explicit loops."""
    best = np.inf
    for code in range(2 ** n):
        y = lam
        for c in range(n):
            if code >> c & 1:
                y *= np.exp(t_f / n)
        best = min(best, y)
    return best
