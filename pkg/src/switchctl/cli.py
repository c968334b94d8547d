"""Command-line experiment runner.

``switchctl run scenario.json`` executes a JSON scenario and
``switchctl builtin <name>`` one of the bundled experiment recipes. Every
run writes CSV/JSON artifacts plus a ``manifest.json`` with their SHA-256
hashes. Artifacts depend only on the scenario and its seed.

Exit codes: 0 success, 1 numerical failure (blowup, non-finite values),
2 configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import excitation, hybrid, miocp, signals, transport

KINDS = ("stability", "pe-wave", "round", "miocp", "hybrid")
DEFAULT_OUT = "switchctl-out"
ENSEMBLE_BATCH = 25


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"config error in field '{field}': {message}")
        self.field = field


class NumericalFailure(Exception):
    pass


# --- defaults and builtins -------------------------------------------------

DEFAULTS: dict[str, dict[str, Any]] = {
    "stability": {
        "system": "exsim",
        "n_signals": 100,
        "t_f": 40.0,
        "N_x": 200,
        "dwell": [0.2, 2.0],
        "cfl": 0.9,
        "n_samples": 401,
    },
    "pe-wave": {
        "b": 0.5,
        "a": 0.25,
        "N_x": 800,
        "t_f": 6.0,
        "T": 2.0,
        "mu": 0.25,
        "checkpoints": [2.0, 4.0, 6.0],
        "full_damping_t_f": 10.0,
    },
    "round": {
        "n_controls": 1,
        "n_modes": 2,
        "n_cells": 32,
        "t_f": 1.0,
        "round_step": 0.0,
        "control_csv": "",
    },
    "miocp": {
        "task": "track",
        "kappa": 0.012,
        "a": 2.5,
        "N_x": [100],
        "n_cells": 96,
        "beta0": 0.5,
        "max_iters": 400,
        "gap_N_x": 100,
        "control_steps": [1.0, 0.5, 0.25, 0.125],
        "t_f": 1.0,
        "lambdas": [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0],
        "n": 12,
        "refinements": [3, 6, 12],
        "kink_h": 1e-3,
    },
    "hybrid": {
        "example": "transport-diffusion",
        "d": 50,
        "c": 1.0,
        "inflow_gain": 2.0,
        "nu": 0.1,
        "t_f": 1.0,
        "sweep": 21,
        "starts": [0.0, 0.25, 0.5, 0.75, 1.0],
        "max_outer": 3,
        "A": [],
        "Q": [],
        "y0": [],
        "modes": [],
        "times": [],
    },
}

BUILTINS: dict[str, dict[str, Any]] = {
    "exsim-stability": {"kind": "stability", "seed": 20240101, "params": {}},
    "wave-counterexample": {"kind": "pe-wave", "seed": 0, "params": {}},
    "burgers-track": {"kind": "miocp", "seed": 0, "params": {"task": "track", "N_x": [100, 200, 300]}},
    "value-scan": {"kind": "miocp", "seed": 0, "params": {"task": "value-scan"}},
    "transport-diffusion": {"kind": "hybrid", "seed": 0, "params": {}},
}


def builtin(name: str) -> dict:
    """Scenario dict of a bundled recipe."""
    if name not in BUILTINS:
        raise ConfigError("name", f"unknown builtin {name!r}; valid names: {', '.join(sorted(BUILTINS))}")
    return copy.deepcopy(BUILTINS[name])


# --- validation ------------------------------------------------------------


def _check_type(field: str, value, default):
    if field == "params.system":
        ok = isinstance(value, (str, dict))
    elif isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list) or (field == "params.N_x" and isinstance(value, int))
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(field, f"expected {type(default).__name__}, got {type(value).__name__}")


def resolve(scenario: dict) -> dict:
    """Fill defaults and type-check; returns a new dict ``{kind, seed, out, params}``."""
    if not isinstance(scenario, dict):
        raise ConfigError("<root>", "scenario must be a JSON object")
    unknown = set(scenario) - {"kind", "seed", "out", "params"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown top-level field")
    kind = scenario.get("kind")
    if kind not in KINDS:
        raise ConfigError("kind", f"must be one of {', '.join(KINDS)}, got {kind!r}")
    seed = scenario.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be an integer in [0, 2^64)")
    out = scenario.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out", "must be a string")
    given = scenario.get("params", {})
    if not isinstance(given, dict):
        raise ConfigError("params", "must be an object")
    params = copy.deepcopy(DEFAULTS[kind])
    for key, value in given.items():
        if key not in params:
            raise ConfigError(f"params.{key}", f"not a parameter of kind {kind!r}")
        _check_type(f"params.{key}", value, params[key])
        params[key] = value
    return {"kind": kind, "seed": seed, "out": out, "params": params}


def apply_override(scenario: dict, item: str) -> None:
    """``key=value`` with ``key`` either top-level or a (``params.``-prefixed) parameter."""
    if "=" not in item:
        raise ConfigError(item, "override must look like key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    if key in ("kind", "seed", "out"):
        scenario[key] = value
        return
    key = key.removeprefix("params.")
    scenario.setdefault("params", {})[key] = value


def _positive(field, v):
    if not v > 0:
        raise ConfigError(field, "must be positive")


def _build_transport(spec) -> transport.TransportSystem:
    if spec == "exsim":
        return transport.exsim_system()
    if not isinstance(spec, dict):
        raise ConfigError("params.system", "must be 'exsim' or an object")
    try:
        sys_ = transport.TransportSystem(
            interval=tuple(spec["interval"]), n=spec["n"], m=spec["m"],
            speeds=tuple(spec["speeds"]), coupling=tuple(np.asarray(c, float) for c in spec.get("coupling", [])),
            G_L=tuple(spec.get("G_L", [])), G_R=tuple(spec.get("G_R", [])),
        )
    except KeyError as e:
        raise ConfigError(f"params.system.{e.args[0]}", "missing") from None
    except (ValueError, TypeError) as e:
        raise ConfigError("params.system", str(e)) from None
    ok, bad = transport.check_hyperbolicity(sys_)
    if not ok:
        raise ConfigError("params.system.speeds", f"not strictly hyperbolic: {bad}")
    return sys_


def validate(sc: dict, base: Optional[Path] = None) -> None:
    """Build the module objects of a resolved scenario to check their invariants."""
    p, kind = sc["params"], sc["kind"]
    if kind == "stability":
        _build_transport(p["system"])
        for f in ("n_signals", "t_f", "N_x", "cfl", "n_samples"):
            _positive(f"params.{f}", p[f])
        if len(p["dwell"]) != 2 or not 0 < p["dwell"][0] <= p["dwell"][1]:
            raise ConfigError("params.dwell", "must be [lo, hi] with 0 < lo <= hi")
    elif kind == "pe-wave":
        try:
            excitation.PEParams(p["T"], p["mu"])
        except ValueError as e:
            raise ConfigError("params.mu", str(e)) from None
        if not 0 < p["a"] < p["b"] < 1:
            raise ConfigError("params.b", "need 0 < a < b < 1")
        for f in ("N_x", "t_f", "full_damping_t_f"):
            _positive(f"params.{f}", p[f])
    elif kind == "round":
        if p["control_csv"]:
            path = Path(p["control_csv"])
            path = path if path.is_absolute() or base is None else base / path
            try:
                signals.control_from_csv(path)
            except (OSError, ValueError) as e:
                raise ConfigError("params.control_csv", str(e)) from None
        for f in ("n_controls", "n_modes", "n_cells", "t_f"):
            _positive(f"params.{f}", p[f])
    elif kind == "miocp":
        if p["task"] not in ("track", "value-scan"):
            raise ConfigError("params.task", "must be 'track' or 'value-scan'")
        try:
            miocp.JinXinProblem.tracking_example(kappa=p["kappa"], a=p["a"])
        except ValueError as e:
            raise ConfigError("params.kappa", str(e)) from None
        if not 0 <= p["beta0"] <= 1:
            raise ConfigError("params.beta0", "must lie in [0, 1]")
        if not 1 <= p["n"] <= 20:
            raise ConfigError("params.n", "must lie in 1..20")
        for f in ("n_cells", "max_iters", "gap_N_x"):
            _positive(f"params.{f}", p[f])
    elif kind == "hybrid":
        if p["example"] not in ("transport-diffusion", ""):
            raise ConfigError("params.example", "must be 'transport-diffusion' or empty")
        if p["example"] == "":
            _build_hybrid(p)
        _positive("params.t_f", p["t_f"])


def _build_hybrid(p):
    try:
        A = [np.asarray(a, float) for a in p["A"]]
        if not A:
            raise ValueError("at least one mode matrix is required")
        running = hybrid.RunningCost.quadratic(np.asarray(p["Q"], float)) if p["Q"] else None
        sys_ = hybrid.HybridSystem(A=A, running=running)
    except (ValueError, TypeError) as e:
        raise ConfigError("params.A", str(e)) from None
    y0 = np.asarray(p["y0"], float)
    if y0.shape != (sys_.dim,):
        raise ConfigError("params.y0", f"expected {sys_.dim} entries")
    try:
        sched = hybrid.SwitchSchedule(tuple(p["modes"]), tuple(p["times"]), p["t_f"])
    except (ValueError, TypeError) as e:
        raise ConfigError("params.modes", str(e)) from None
    if max(sched.modes) > sys_.n_modes:
        raise ConfigError("params.modes", "mode label exceeds the number of matrices")
    return sys_, y0, sched


# --- artifacts -------------------------------------------------------------


class Artifacts:
    """Collects named text artifacts and writes them with a manifest."""

    def __init__(self):
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def json(self, name: str, obj) -> None:
        self.add(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        self.add(name, buf.getvalue())

    def write(self, out: Path, meta: dict) -> Path:
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for name in sorted(self.files):
            data = self.files[name].encode("utf-8")
            (out / name).write_bytes(data)
            entries.append({"name": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
        manifest = dict(meta, artifacts=entries)
        path = out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _finite(*arrays):
    return all(np.all(np.isfinite(np.asarray(a, float))) for a in arrays)


# --- runners ---------------------------------------------------------------


def run_stability(p, seed, art: Artifacts, jobs: int):
    sys_ = _build_transport(p["system"])
    cert = transport.spectral_radius_condition(sys_)
    art.add("certificate.json", cert.to_json() + "\n")
    seeds = np.random.SeedSequence(seed).spawn(p["n_signals"])
    sigs = [signals.random_signal(np.random.default_rng(s), p["t_f"], sys_.n_modes, tuple(p["dwell"])) for s in seeds]
    t_out = np.linspace(0.0, p["t_f"], p["n_samples"])
    y0 = lambda x: transport.sine_bump(x, sys_.n)
    batches = [sigs[i:i + ENSEMBLE_BATCH] for i in range(0, len(sigs), ENSEMBLE_BATCH)]
    run = lambda b: transport.simulate_ensemble(sys_, b, y0, p["t_f"], p["N_x"], p["cfl"], t_out)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            trajs = [t for batch in ex.map(run, batches) for t in batch]
    else:
        trajs = [t for b in batches for t in run(b)]
    norms = np.array([transport.sup_norm_series(tr)[1] for tr in trajs])
    if not _finite(norms):
        raise NumericalFailure("non-finite state in the ensemble")
    y0_norm = float(norms[0, 0])
    fits = [transport.fit_decay((t_out, v), y0_norm) for v in norms]
    ens = transport.fit_decay((t_out, norms.max(axis=0)), y0_norm)
    env = ens.envelope(t_out)
    art.csv("decay.csv", ["signal", "switches", "K_fit", "mu_fit", "residual"],
            [(i, s.n_switches, f.K_fit, f.mu_fit, f.residual) for i, (s, f) in enumerate(zip(sigs, fits))])
    art.csv("norms.csv", ["t"] + [f"s{i:03d}" for i in range(len(sigs))], np.column_stack([t_out, norms.T]).tolist())
    art.csv("envelope.csv", ["t", "max_norm", "envelope"], zip(t_out, norms.max(axis=0), env))
    mus = np.array([f.mu_fit for f in fits])
    summary = {
        "rho_max": cert.rho_max, "certificate_passes": cert.passes, "product_max": cert.product_max,
        "mu_fit_min": float(mus.min()), "mu_fit_median": float(np.median(mus)),
        "ensemble_K": ens.K_fit, "ensemble_mu": ens.mu_fit,
        "envelope_dominates": bool(np.all(norms <= env * (1 + 1e-12))),
    }
    art.json("summary.json", summary)
    return summary


def run_pe_wave(p, seed, art: Artifacts, jobs: int):
    b, a = p["b"], p["a"]
    params = excitation.PEParams(p["T"], p["mu"])
    sigma = excitation.counterexample_signal(b, max(p["t_f"], p["full_damping_t_f"]) + 1.0)
    report = excitation.is_pe(sigma, params, max(p["t_f"], p["full_damping_t_f"]))
    art.add("pe.json", report.to_json() + "\n")
    trace = excitation.counterexample_run(b, a, p["N_x"], p["t_f"])
    full = excitation.counterexample_run(b, a, p["N_x"], p["full_damping_t_f"], full_damping=True)
    if not _finite(trace.energy, full.energy):
        raise NumericalFailure("non-finite wave energy")
    art.add("energy.csv", trace.to_csv())
    art.add("energy_full_damping.csv", full.to_csv())
    ratios = {str(t): float(trace.at(t) / trace.initial) for t in p["checkpoints"]}
    summary = {
        "pe_passes": report.passes, "pe_worst_mass": report.worst_mass,
        "E0": trace.initial, "energy_ratios": ratios,
        "full_damping_ratio": float(full.energy[-1] / full.initial),
    }
    art.json("summary.json", summary)
    return summary


def run_round(p, seed, art: Artifacts, jobs: int, base: Optional[Path] = None):
    rows = []
    if p["control_csv"]:
        path = Path(p["control_csv"])
        path = path if path.is_absolute() or base is None else base / path
        controls = [signals.control_from_csv(path)]
    else:
        controls = []
        for s in np.random.SeedSequence(seed).spawn(p["n_controls"]):
            rng = np.random.default_rng(s)
            grid = signals.TimeGrid.uniform(0.0, p["t_f"], p["n_cells"])
            controls.append(signals.RelaxedControl(grid, rng.dirichlet(np.ones(p["n_modes"]), p["n_cells"])))
    for i, beta in enumerate(controls):
        if isinstance(beta, signals.BinaryControl):
            beta = beta.as_relaxed()
        grid = signals.TimeGrid.with_step(beta.grid.t0, beta.grid.tf, p["round_step"]) if p["round_step"] else None
        alpha = signals.sum_up_round(beta, grid)
        dev = signals.integrated_deviation(alpha, beta)
        bound = signals.sur_bound(beta, alpha.grid)
        art.add(f"relaxed_{i:03d}.csv", signals.control_to_csv(beta))
        art.add(f"binary_{i:03d}.csv", signals.control_to_csv(alpha))
        sw = signals.count_switches(signals.to_switching_signal(alpha), beta.n_modes)
        rows.append((i, dev, bound, int(np.asarray(sw.counts).sum())))
    art.csv("rounding.csv", ["control", "deviation", "bound", "switches"], rows)
    summary = {"max_deviation": max(r[1] for r in rows), "all_within_bound": all(r[1] <= r[2] + 1e-12 for r in rows)}
    art.json("summary.json", summary)
    return summary


def run_miocp(p, seed, art: Artifacts, jobs: int):
    if p["task"] == "value-scan":
        return _value_scan(p, art)
    prob = miocp.JinXinProblem.tracking_example(kappa=p["kappa"], a=p["a"])
    n_list = p["N_x"] if isinstance(p["N_x"], list) else [p["N_x"]]
    beta0 = np.full(p["n_cells"], float(p["beta0"]))

    def one(n):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", miocp.SubcharacteristicWarning)
            rep = miocp.descend(prob, miocp.PDEGrid(n, prob.length), beta0, max_iters=p["max_iters"])
        return rep, any(issubclass(w.category, miocp.SubcharacteristicWarning) for w in caught)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            reports = list(ex.map(one, n_list))
    else:
        reports = [one(n) for n in n_list]
    summary = {"J_star": {}, "iterations": {}, "reason": {}, "subcharacteristic_violation": {}}
    for n, (rep, viol) in zip(n_list, reports):
        if not np.isfinite(rep.J):
            raise NumericalFailure(f"non-finite cost at N_x = {n}")
        art.add(f"descent_N{n}.csv", rep.to_csv())
        art.add(f"beta_N{n}.csv", signals.control_to_csv(rep.control(prob.t_f)))
        summary["J_star"][str(n)] = rep.J
        summary["iterations"][str(n)] = rep.iterations
        summary["reason"][str(n)] = rep.reason
        summary["subcharacteristic_violation"][str(n)] = viol
    if p["gap_N_x"] in n_list:
        rep = reports[n_list.index(p["gap_N_x"])][0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", miocp.SubcharacteristicWarning)
            gap = miocp.round_and_gap(prob, miocp.PDEGrid(p["gap_N_x"], prob.length), rep.beta,
                                      p["control_steps"], jobs=jobs)
        art.add("gap.csv", gap.to_csv())
        for dt, alpha in zip((r[0] for r in gap.rows), gap.controls):
            art.add(f"sigma_dt{dt:g}.csv", signals.control_to_csv(alpha))
        summary["gap"] = {"rows": [list(r) for r in gap.rows], "slope": gap.slope()}
    art.json("summary.json", summary)
    return summary


def _value_scan(p, art: Artifacts):
    rows = miocp.value_scan(p["t_f"], p["lambdas"], p["n"])
    art.csv("value_scan.csv", ["lambda", "nu_bruteforce", "nu_closed"], rows)
    refine = []
    for n in p["refinements"]:
        err = max(abs(b - c) for _, b, c in miocp.value_scan(p["t_f"], [l for l in p["lambdas"] if l < 0], n))
        refine.append((n, err))
    art.csv("refinement.csv", ["n", "max_error_negative_lambda"], refine)
    h = p["kink_h"]
    (_, vm, _), (_, v0, _), (_, vp, _) = miocp.value_scan(p["t_f"], [-h, 0.0, h], p["n"])
    summary = {
        "max_error_nonnegative": max((abs(b - c) for l, b, c in rows if l >= 0), default=0.0),
        "max_error_negative": max((abs(b - c) for l, b, c in rows if l < 0), default=0.0),
        "slope_left": (v0 - vm) / h,
        "slope_right": (vp - v0) / h,
    }
    art.json("summary.json", summary)
    return summary


def run_hybrid(p, seed, art: Artifacts, jobs: int):
    if p["example"] == "":
        sys_, y0, sched = _build_hybrid(p)
        traj = hybrid.simulate_hybrid(sys_, sched, y0)
        if traj.blowup:
            raise NumericalFailure("hybrid trajectory blew up")
        g = hybrid.switch_time_gradient(sys_, traj, hybrid.adjoint_hybrid(sys_, traj))
        rep = hybrid.necessary_conditions(sched, g)
        art.add("gradient.json", rep.to_json() + "\n")
        summary = {"cost": traj.cost, "gradient": g.tolist(), "stationary": bool(rep.satisfied.all())}
        art.json("summary.json", summary)
        return summary
    sys_, y0 = hybrid.transport_diffusion_example(p["d"], p["c"], p["inflow_gain"], p["nu"])
    t_f = p["t_f"]
    taus = np.linspace(0.0, t_f, p["sweep"])
    sweep = []
    for tau in taus:
        traj = hybrid.simulate_hybrid(sys_, hybrid.SwitchSchedule((1, 2), (float(tau),), t_f), y0)
        if traj.blowup:
            raise NumericalFailure(f"blowup at tau = {tau}")
        g = hybrid.switch_time_gradient(sys_, traj, hybrid.adjoint_hybrid(sys_, traj))[0]
        sweep.append((float(tau), traj.cost, float(g)))
    art.csv("sweep.csv", ["tau", "cost", "dcost_dtau"], sweep)

    def opt(start):
        return hybrid.optimize_schedule(sys_, hybrid.SwitchSchedule((1, 2), (float(start),), t_f), y0,
                                        max_outer=p["max_outer"])

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            reports = list(ex.map(opt, p["starts"]))
    else:
        reports = [opt(s) for s in p["starts"]]
    runs = []
    for start, rep in zip(p["starts"], reports):
        runs.append({
            "start": float(start), "modes": list(rep.schedule.modes), "times": list(rep.schedule.times),
            "first_entry_diffusion": rep.schedule.first_entry(2), "cost_history": [float(c) for c in rep.history],
            "insertions": [list(i) for i in rep.insertions], "reason": rep.reason,
        })
    art.json("optimize.json", runs)
    summary = {
        "min_gradient": min(s[2] for s in sweep),
        "max_first_entry": max(r["first_entry_diffusion"] for r in runs),
        "final_cost": [r["cost_history"][-1] for r in runs],
    }
    art.json("summary.json", summary)
    return summary


RUNNERS: dict[str, Callable] = {
    "stability": run_stability,
    "pe-wave": run_pe_wave,
    "round": run_round,
    "miocp": run_miocp,
    "hybrid": run_hybrid,
}


def execute(scenario: dict, out: Optional[str] = None, seed: Optional[int] = None, jobs: int = 1,
            overrides=(), base: Optional[Path] = None, name: str = "") -> tuple[int, Path]:
    """Resolve, validate and run a scenario; returns ``(exit code, output dir)``."""
    scenario = copy.deepcopy(scenario)
    for item in overrides:
        apply_override(scenario, item)
    if seed is not None:
        scenario["seed"] = seed
    sc = resolve(scenario)
    validate(sc, base)
    out_dir = Path(out or os.environ.get("SWITCHCTL_OUT") or sc["out"] or Path(DEFAULT_OUT) / (name or sc["kind"]))
    art = Artifacts()
    art.json("scenario.json", {"kind": sc["kind"], "seed": sc["seed"], "params": sc["params"]})
    runner = RUNNERS[sc["kind"]]
    code = 0
    try:
        if sc["kind"] == "round":
            runner(sc["params"], sc["seed"], art, jobs, base)
        else:
            runner(sc["params"], sc["seed"], art, jobs)
    except NumericalFailure as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        code = 1
    art.write(out_dir, {"kind": sc["kind"], "seed": sc["seed"], "name": name, "status": "ok" if code == 0 else "failed"})
    return code, out_dir


def _load(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError("file", str(e)) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("file", f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="switchctl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides SWITCHCTL_OUT and the scenario)")
    common.add_argument("--seed", type=int, help="seed replacing the scenario seed")
    common.add_argument("--jobs", type=int, default=1, help="maximum worker threads")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a scenario field; values are parsed as JSON when possible")
    p_run = sub.add_parser("run", parents=[common], help="run a scenario file")
    p_run.add_argument("file", type=Path)
    p_b = sub.add_parser("builtin", parents=[common], help="run a bundled experiment")
    p_b.add_argument("name")
    sub.add_parser("list", help="list bundled experiments")
    args = ap.parse_args(argv)

    if args.command == "list":
        for n in sorted(BUILTINS):
            print(n)
        return 0
    if args.jobs < 1:
        print("config error in field 'jobs': must be at least 1", file=sys.stderr)
        return 2
    try:
        if args.command == "run":
            scenario, base, name = _load(args.file), args.file.parent, args.file.stem
        else:
            scenario, base, name = builtin(args.name), None, args.name
        code, out = execute(scenario, args.out, args.seed, args.jobs, args.override, base, name)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return 2
    print(out / "manifest.json")
    return code


if __name__ == "__main__":
    sys.exit(main())
