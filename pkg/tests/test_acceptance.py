"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are repeated in the
terminal summary. The builtin experiments are run once and shared; the
determinism check reruns every builtin and compares artifact hashes.
"""

import csv
import json
import time

import numpy as np
import pytest

from oracles import TIGHT, fd_control_gradient, fd_insertion, fd_switch_gradient, random_hybrid, random_schedule, relative_error
from switchctl import cli, hybrid, miocp, signals, transport

pytestmark = pytest.mark.slow


class BuiltinRuns:
    def __init__(self, root):
        self.root = root
        self.cache = {}

    def get(self, name):
        if name not in self.cache:
            t0 = time.perf_counter()
            code, out = cli.execute(cli.builtin(name), out=str(self.root / name / "a"), name=name)
            self.cache[name] = (code, out, time.perf_counter() - t0)
        return self.cache[name]

    def summary(self, name):
        return json.loads((self.get(name)[1] / "summary.json").read_text())


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return BuiltinRuns(tmp_path_factory.mktemp("builtins"))


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_criterion_01_sur_bound(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    violations, worst = 0, 0.0
    for _ in range(200):
        m = int(rng.integers(2, 5))
        n = int(rng.integers(1, 65))
        nodes = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, n - 1)), [1.0]])
        nodes = np.unique(nodes)
        grid = signals.TimeGrid(nodes)
        beta = signals.RelaxedControl(grid, rng.dirichlet(np.ones(m), grid.n_cells))
        dev = signals.integrated_deviation(signals.sum_up_round(beta), beta)
        bound = (m - 1) * grid.max_step
        worst = max(worst, dev / bound)
        violations += dev > bound
    dt = time.perf_counter() - t0
    criterion(1, {"no violations": violations == 0, "runtime < 5 s": dt < 5},
              f"200 controls, violations={violations}, max deviation/bound={worst:.3f}", dt)


def test_criterion_02_stability_experiment(runs, criterion):
    code, out, dt = runs.get("exsim-stability")
    _, decay = read_csv(out / "decay.csv")
    _, norms = read_csv(out / "norms.csv")
    _, env = read_csv(out / "envelope.csv")
    mu = decay[:, 3]
    dominates = bool(np.all(norms[:, 1:] <= env[:, 2:3] * (1 + 1e-12)))
    criterion(2, {"exit 0": code == 0, "100 signals": mu.size == 100, "mu_fit > 0.005": bool(mu.min() > 0.005),
                  "envelope dominates": dominates, "runtime < 2 min": dt < 120},
              f"min mu_fit={mu.min():.4f}, ensemble envelope dominates={dominates}", dt)


def test_criterion_03_spectral_certificate(criterion):
    t0 = time.perf_counter()
    cert = transport.spectral_radius_condition(transport.exsim_system())
    dt = time.perf_counter() - t0
    criterion(3, {"product 0.7381": abs(cert.product_max - 0.7381) < 1e-12,
                  "rho = sqrt(0.7381)": abs(cert.rho_max - np.sqrt(0.7381)) < 1e-10,
                  "passes": cert.passes},
              f"product={cert.product_max!r}, rho={cert.rho_max!r}", dt)


def test_criterion_04_wave_counterexample(runs, criterion):
    code, out, dt = runs.get("wave-counterexample")
    s = runs.summary("wave-counterexample")
    ratios = [s["energy_ratios"][k] for k in ("2.0", "4.0", "6.0")]
    criterion(4, {"exit 0": code == 0, "PE (2, 0.25)": s["pe_passes"],
                  "E(2,4,6) within 2%": all(abs(r - 1) <= 0.02 for r in ratios),
                  "full damping E(10)/E(0) < 0.5": s["full_damping_ratio"] < 0.5, "runtime < 1 min": dt < 60},
              f"E(t)/E(0)={[round(r, 6) for r in ratios]}, full damping ratio={s['full_damping_ratio']:.4f}", dt)


def test_criterion_05_gradient_oracles(criterion):
    t0 = time.perf_counter()
    prob = miocp.JinXinProblem.tracking_example()
    err_a = 0.0
    for n_x in (25, 50):
        grid = miocp.PDEGrid(n_x, prob.length)
        rng = np.random.default_rng(n_x)
        beta = rng.uniform(0.1, 0.9, 96)
        _, g = miocp.gradient(prob, grid, beta)
        for c in rng.choice(96, 5, replace=False):
            fd = fd_control_gradient(prob, grid, beta, c)
            err_a = max(err_a, abs(g[c] - fd) / abs(fd))
    rng = np.random.default_rng(2024)
    err_b = 0.0
    for _ in range(20):
        sys_, y0 = random_hybrid(rng)
        sched = random_schedule(rng, 2, int(rng.integers(1, 4)))
        traj = hybrid.simulate_hybrid(sys_, sched, y0, **TIGHT)
        g = hybrid.switch_time_gradient(sys_, traj, hybrid.adjoint_hybrid(sys_, traj, **TIGHT))
        fd = [fd_switch_gradient(sys_, sched, y0, k) for k in range(1, sched.N + 1)]
        err_b = max(err_b, relative_error(g, fd))
    err_c = 0.0
    for _ in range(10):
        sys_, y0 = random_hybrid(rng, dim=4, n_modes=3, with_costs=False, composable=True)
        sched = random_schedule(rng, 3, 2)
        t_hat = float(rng.uniform(0, 1))
        active = sched.modes[sched.interval_of(t_hat)]
        mode = int(rng.choice([m for m in (1, 2, 3) if m != active]))
        g = hybrid.mode_insertion_gradient(sys_, sched, y0, t_hat, mode, **TIGHT)
        err_c = max(err_c, relative_error(g, fd_insertion(sys_, sched, y0, t_hat, mode)))
    dt = time.perf_counter() - t0
    criterion(5, {"(a) <= 1e-6": err_a <= 1e-6, "(b) <= 1e-5": err_b <= 1e-5, "(c) <= 1e-3": err_c <= 1e-3,
                  "runtime < 2 min": dt < 120},
              f"rel. errors (a)={err_a:.2e} (b)={err_b:.2e} (c)={err_c:.2e}", dt)


def test_criterion_06_relaxed_optimum(runs, criterion):
    code, out, dt = runs.get("burgers-track")
    J = runs.summary("burgers-track")["J_star"]
    seq = [J["100"], J["200"], J["300"]]
    criterion(6, {"exit 0": code == 0, "J*(100) in [0.166, 0.224]": 0.166 <= seq[0] <= 0.224,
                  "strictly decreasing": seq[0] > seq[1] > seq[2], "runtime < 10 min": dt < 600},
              f"J* at N_x=100/200/300: {seq[0]:.4f} / {seq[1]:.4f} / {seq[2]:.4f}", dt)


def test_criterion_07_rounding_gap_rate(runs, criterion):
    code, out, _ = runs.get("burgers-track")
    prob = miocp.JinXinProblem.tracking_example()
    beta = signals.control_from_csv(out / "beta_N100.csv")
    t0 = time.perf_counter()
    rep = miocp.round_and_gap(prob, miocp.PDEGrid(100, prob.length), beta, (1.0, 0.5, 0.25, 0.125))
    dt = time.perf_counter() - t0
    steps = [r[0] for r in rep.rows]
    gaps = np.array([abs(r[1] - rep.J_star) for r in rep.rows])
    slope = rep.slope()
    criterion(7, {"slope >= 0.8": slope >= 0.8, "dt=0.125 gap minimal": steps[int(np.argmin(gaps))] == 0.125,
                  "runtime < 5 min": dt < 300},
              f"|J(sigma)-J*| for dt={steps}: {[float(f'{g:.4g}') for g in gaps]}, slope={slope:.2f}", dt)


def test_criterion_08_value_function(runs, criterion):
    code, out, dt = runs.get("value-scan")
    s = runs.summary("value-scan")
    _, refine = read_csv(out / "refinement.csv")
    improving = bool(np.all(np.diff(refine[:, 1]) <= 0))
    criterion(8, {"lambda >= 0 within 1e-3": s["max_error_nonnegative"] <= 1e-3,
                  "lambda < 0 within 5e-2": s["max_error_negative"] <= 5e-2, "improves under refinement": improving,
                  "left slope e": abs(s["slope_left"] - np.e) <= 0.05, "right slope 1": abs(s["slope_right"] - 1) <= 0.05,
                  "runtime < 10 s": dt < 10},
              f"errors {s['max_error_nonnegative']:.1e}/{s['max_error_negative']:.1e}, "
              f"slopes {s['slope_left']:.4f}/{s['slope_right']:.4f}", dt)


def test_criterion_09_transport_diffusion(runs, criterion):
    code, out, dt = runs.get("transport-diffusion")
    _, sweep = read_csv(out / "sweep.csv")
    opt = json.loads((out / "optimize.json").read_text())
    first = max(r["first_entry_diffusion"] for r in opt)
    criterion(9, {"21-point sweep": sweep.shape[0] == 21, "dPhi/dtau >= -1e-8": bool(sweep[:, 2].min() >= -1e-8),
                  "tau <= 1e-3 from every start": first <= 1e-3, "runtime < 1 min": dt < 60},
              f"min dPhi/dtau={sweep[:, 2].min():.3e}, starts={[r['start'] for r in opt]}, max tau*={first}", dt)


def test_criterion_10_determinism(runs, criterion):
    t0 = time.perf_counter()
    same = {}
    for name in sorted(cli.BUILTINS):
        _, first, _ = runs.get(name)
        _, second = cli.execute(cli.builtin(name), out=str(runs.root / name / "b"), name=name)
        a = json.loads((first / "manifest.json").read_text())["artifacts"]
        b = json.loads((second / "manifest.json").read_text())["artifacts"]
        same[name] = a == b and all((first / e["name"]).read_bytes() == (second / e["name"]).read_bytes() for e in a)
    dt = time.perf_counter() - t0
    criterion(10, {f"{k} identical": v for k, v in same.items()},
              f"{sum(same.values())}/{len(same)} builtins byte-identical on rerun", dt)
