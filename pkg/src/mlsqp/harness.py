"""Experiment plans, batch runs and performance profiles."""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import math
import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import METHODS, BaselineConfig, run_method
from .minres import MinresConfig
from .problem_core import FiniteSumOracle
from .problem_suite import default_start, resolve_problem
from .merit import MODIFIED
from .sampling import ScheduleError, parse_schedule_key
from .solver import CONVERGED, SamplingConfig, SolverConfig, write_trace_csv

log = logging.getLogger(__name__)

MORALES_CAP = 10.0
MANIFEST = "manifest.json"


class PlanError(ValueError):
    """Invalid plan or configuration file."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class Budgets:
    iterations: int = 100
    function_evals: float | None = None   # multiples of N (full-evaluation equivalents)
    hessian_evals: float | None = None
    minres_iters: float | None = None     # multiples of (n + m) N

    def __post_init__(self):
        for name in ("iterations", "function_evals", "hessian_evals", "minres_iters"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise PlanError(f"budget {name} must be positive")


@dataclass
class ExperimentPlan:
    problems: list
    methods: list
    replications: int = 1
    seeds: list = field(default_factory=list)
    budgets: Budgets = field(default_factory=Budgets)
    solver: dict = field(default_factory=dict)    # SolverConfig / BaselineConfig overrides

    def __post_init__(self):
        if not self.problems or not self.methods:
            raise PlanError("plan needs at least one problem and one method")
        if self.replications < 1:
            raise PlanError("replications must be >= 1")
        for m in self.methods:
            if m not in METHODS:
                raise PlanError(f"unknown method {m!r}")
        if not self.seeds:
            self.seeds = list(range(self.replications))
        if len(set(self.seeds)) != len(self.seeds):
            raise PlanError("duplicate seeds")

    def runs(self):
        for p in self.problems:
            for m in self.methods:
                for s in self.seeds:
                    yield p, m, s


_SOLVER_FLOATS = {"tau_init", "eta", "nu_alpha", "nu_gamma", "gamma0_factor", "sigma",
                  "eps_tau", "termination_tol", "zeta_min"}
_SOLVER_INTS = {"max_iterations", "max_backtracks"}
_SOLVER_STRS = {"solve_mode", "hessian", "modified_hessian"}
_BASELINE_KEYS = {"watchdog_relaxed_steps": int, "auglag_penalty_init": float,
                  "auglag_penalty_cap": float, "auglag_damping": None}


def _split(value: str) -> list:
    return [v.strip() for v in value.replace("\n", ",").split(",") if v.strip()]


def parse_solver_section(section) -> dict:
    """Validate a ``[solver]`` section into a plain override dict."""
    out = {}
    for key, raw in section.items():
        try:
            if key in _SOLVER_FLOATS or key == "kappa":
                out[key] = float(raw)
            elif key in _SOLVER_INTS:
                out[key] = int(raw)
            elif key in _SOLVER_STRS or key.startswith("sampling_"):
                out[key] = raw.strip()
            elif key in ("force_unit_step", "auglag_damping"):
                out[key] = section.getboolean(key) if hasattr(section, "getboolean") else \
                    raw.strip().lower() in ("1", "true", "yes", "on")
            elif key in _BASELINE_KEYS:
                out[key] = _BASELINE_KEYS[key](raw)
            else:
                raise PlanError(f"unknown solver option {key!r}")
        except ValueError as exc:
            if isinstance(exc, PlanError):
                raise
            raise PlanError(f"bad value for {key!r}: {raw!r}") from exc
    for key in ("sampling_f", "sampling_g", "sampling_h"):
        if key in out:
            try:
                parse_schedule_key(out[key], 100)
            except ScheduleError as exc:
                raise PlanError(str(exc)) from exc
    build_config(out)   # surface errors early
    return out


def read_config_file(path) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise PlanError(f"cannot read {path}: {exc}") from exc
    return parse_solver_section(cp["solver"]) if cp.has_section("solver") else {}


def load_plan(path) -> ExperimentPlan:
    """Read an INI plan with ``[plan]``, optional ``[budgets]`` and ``[solver]``."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise PlanError(f"cannot read plan {path}: {exc}") from exc
    if not cp.has_section("plan"):
        raise PlanError("plan file needs a [plan] section")
    sec = cp["plan"]
    try:
        problems = _split(sec.get("problems", ""))
        methods = _split(sec.get("methods", ""))
        replications = sec.getint("replications", 1)
        seeds = [int(s) for s in _split(sec.get("seeds", ""))]
        budgets = Budgets()
        if cp.has_section("budgets"):
            b = cp["budgets"]
            budgets = Budgets(
                iterations=b.getint("iterations", 100),
                function_evals=b.getfloat("function_evals", None),
                hessian_evals=b.getfloat("hessian_evals", None),
                minres_iters=b.getfloat("minres_iters", None))
    except ValueError as exc:
        if isinstance(exc, PlanError):
            raise
        raise PlanError(str(exc)) from exc
    solver = parse_solver_section(cp["solver"]) if cp.has_section("solver") else {}
    return ExperimentPlan(problems, methods, replications, seeds, budgets, solver)


def build_config(overrides: dict, budgets: Budgets | None = None, oracle=None,
                 seed: int = 0) -> BaselineConfig:
    kw = {k: v for k, v in overrides.items()
          if k in _SOLVER_FLOATS | _SOLVER_INTS | _SOLVER_STRS | {"force_unit_step"}}
    if "kappa" in overrides:
        kw["minres"] = MinresConfig(kappa=overrides["kappa"])
    keys = [overrides.get(f"sampling_{s}", "full") for s in ("f", "g", "h")]
    if any(k != "full" for k in keys) or isinstance(oracle, FiniteSumOracle):
        kw["sampling"] = SamplingConfig(*keys)
    if budgets is not None:
        kw["max_iterations"] = budgets.iterations
        N = getattr(oracle, "N", 1)
        if budgets.function_evals is not None:
            kw["budget_fevals"] = budgets.function_evals
        if budgets.hessian_evals is not None:
            kw["budget_hevals"] = budgets.hessian_evals
        if budgets.minres_iters is not None and oracle is not None:
            kw["budget_minres"] = int(budgets.minres_iters * (oracle.n + oracle.m) * N)
    kw["seed"] = seed
    try:
        solver = SolverConfig(**kw)
        base = {k: overrides[k] for k in _BASELINE_KEYS if k in overrides}
        return BaselineConfig(solver=solver, **base)
    except (TypeError, ValueError, KeyError) as exc:
        raise PlanError(f"invalid solver configuration: {exc}") from exc


def config_hash(problem: str, method: str, seed: int, overrides: dict, budgets: Budgets) -> str:
    blob = json.dumps({"problem": problem, "method": method, "seed": seed,
                       "solver": overrides, "budgets": asdict(budgets)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def _atomic_write_json(path: Path, data) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)


def run_single(problem: str, method: str, seed: int, overrides: dict, budgets: Budgets,
               out_dir) -> dict:
    """One solve; writes ``<stem>.csv`` and ``<stem>.json`` and returns the manifest entry."""
    out_dir = Path(out_dir)
    oracle = resolve_problem(problem, seed=seed)
    cfg = build_config(overrides, budgets, oracle, seed)
    start = default_start(oracle, seed if isinstance(oracle, FiniteSumOracle) else None)
    outcome = run_method(method, oracle, start, cfg)
    h = config_hash(problem, method, seed, overrides, budgets)
    stem = f"{problem.replace(':', '_').replace('/', '_')}__{method}__s{seed}__{h}"
    trace_path = out_dir / f"{stem}.csv"
    summary_path = out_dir / f"{stem}.json"
    tmp = trace_path.with_suffix(".csv.tmp")
    write_trace_csv(outcome.trace, tmp)
    os.replace(tmp, trace_path)
    summary = outcome.summary()
    summary.update({"problem": problem, "seed": seed, "config_hash": h})
    summary.update(branch_statistics(outcome.trace) if outcome.trace else {})
    _atomic_write_json(summary_path, summary)
    return {"problem": problem, "method": method, "seed": seed, "config_hash": h,
            "status": outcome.status, "iterations": outcome.iterations,
            "fevals": outcome.counters.get("f", 0.0), "hevals": outcome.counters.get("H", 0.0),
            "trace": trace_path.name, "summary": summary_path.name}


def _run_single_args(args):
    return run_single(*args)


def load_manifest(out_dir) -> dict:
    path = Path(out_dir) / MANIFEST
    if not path.exists():
        return {"runs": []}
    with open(path) as fh:
        return json.load(fh)


def run_plan(plan: ExperimentPlan, out_dir, workers: int = 1) -> dict:
    """Run every (problem, method, seed) triple not already in the manifest.

    Returns the manifest; its ``executed`` field counts the solves performed
    by this call.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for p in plan.problems:
        resolve_problem(p)          # fail fast on bad keys
    manifest = load_manifest(out)
    done = {(r["config_hash"]) for r in manifest["runs"]
            if (out / r["trace"]).exists() and (out / r["summary"]).exists()}
    todo = []
    for p, m, s in plan.runs():
        h = config_hash(p, m, s, plan.solver, plan.budgets)
        if h not in done:
            todo.append((p, m, s, plan.solver, plan.budgets, str(out)))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_run_single_args, todo))
    else:
        entries = [run_single(*args) for args in todo]
    keep = [r for r in manifest["runs"] if r["config_hash"] not in {e["config_hash"] for e in entries}]
    manifest = {"runs": keep + entries, "executed": len(entries)}
    _atomic_write_json(out / MANIFEST, manifest)
    log.info("executed %d runs, %d already complete", len(entries), len(keep))
    return manifest


def verify_manifest(out_dir) -> list:
    """Problems with the manifest: missing files or mismatched hashes."""
    out = Path(out_dir)
    issues = []
    for r in load_manifest(out)["runs"]:
        for key in ("trace", "summary"):
            if not (out / r[key]).exists():
                issues.append(f"missing {r[key]}")
        if (out / r["summary"]).exists():
            with open(out / r["summary"]) as fh:
                if json.load(fh).get("config_hash") != r["config_hash"]:
                    issues.append(f"hash mismatch for {r['summary']}")
    return issues


def aggregate_summaries(manifest: dict) -> dict:
    """Mean metrics over replications per (problem, method)."""
    groups = {}
    for r in manifest["runs"]:
        groups.setdefault((r["problem"], r["method"]), []).append(r)
    out = {}
    for (p, m), runs in groups.items():
        out[f"{p}|{m}"] = {
            "problem": p, "method": m, "replications": len(runs),
            "solve_fraction": float(np.mean([r["status"] == CONVERGED for r in runs])),
            "iterations": float(np.mean([r["iterations"] for r in runs])),
            "fevals": float(np.mean([r["fevals"] for r in runs])),
            "hevals": float(np.mean([r["hevals"] for r in runs])),
        }
    return out


METRICS = {"iters": "iterations", "fevals": "fevals", "hess": "hevals"}


def cost_table(manifest: dict, metric: str = "iters") -> dict:
    """``{method: {problem: cost}}`` with ``inf`` for failed runs; replications
    of a converged (problem, method) are averaged, any failure fails the cell."""
    field_name = METRICS[metric]
    cells = {}
    for r in manifest["runs"]:
        cells.setdefault(r["method"], {}).setdefault(r["problem"], []).append(
            r[field_name] if r["status"] == CONVERGED else math.inf)
    return {m: {p: float(np.mean(v)) for p, v in probs.items()} for m, probs in cells.items()}


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------

@dataclass
class ProfileTable:
    methods: list
    problems: list
    ratios: dict          # method -> array of per-problem performance ratios (inf = failure)
    grid: np.ndarray
    curves: dict          # method -> rho values on ``grid``

    def rho(self, method: str, t: float) -> float:
        r = self.ratios[method]
        return float(np.mean(r <= t)) if r.size else 0.0

    def solve_fraction(self, method: str) -> float:
        r = self.ratios[method]
        return float(np.mean(np.isfinite(r))) if r.size else 0.0

    def to_dict(self) -> dict:
        return {"methods": self.methods, "problems": self.problems,
                "grid": self.grid.tolist(),
                "curves": {m: c.tolist() for m, c in self.curves.items()},
                "ratios": {m: [None if not np.isfinite(v) else float(v) for v in r]
                           for m, r in self.ratios.items()}}


def _is_fail(v) -> bool:
    return v is None or not np.isfinite(v)


def dolan_more_profile(costs: dict, grid=None) -> ProfileTable:
    """``rho_s(t)`` = fraction of problems with cost within ``t`` times the best."""
    methods = list(costs)
    if len(methods) < 1:
        raise ValueError("need at least one method")
    problems = sorted(set().union(*[set(c) for c in costs.values()]))
    if not problems:
        raise ValueError("need at least one problem")
    kept = []
    for p in problems:
        vals = [costs[m].get(p) for m in methods]
        if all(_is_fail(v) for v in vals):
            warnings.warn(f"dropping problem {p!r}: no method solved it")
            continue
        kept.append(p)
    ratios = {}
    for m in methods:
        r = []
        for p in kept:
            best = min(costs[q][p] for q in methods if not _is_fail(costs[q].get(p)))
            v = costs[m].get(p)
            if _is_fail(v):
                r.append(math.inf)
            elif best == 0:
                r.append(1.0 if v == 0 else math.inf)
            else:
                r.append(v / best)
        ratios[m] = np.asarray(r, float)
    if grid is None:
        finite = [v for r in ratios.values() for v in r if np.isfinite(v)]
        top = max(finite) if finite else 1.0
        grid = np.unique(np.concatenate([[1.0], np.geomspace(1.0, max(top, 1.0) * 1.01, 64),
                                         finite]))
    grid = np.asarray(grid, float)
    curves = {m: np.array([np.mean(r <= t) if r.size else 0.0 for t in grid])
              for m, r in ratios.items()}
    return ProfileTable(methods, kept, ratios, grid, curves)


def morales_profile(costs_a: dict, costs_b: dict, cap: float = MORALES_CAP) -> list:
    """Per-problem ``-log2(cost_A / cost_B)``; positive values favour A.

    Failures: A fails and B solves gives ``-cap``, the reverse ``+cap`` and a
    double failure ``0``.  Values are clipped to ``[-cap, cap]``.
    """
    if set(costs_a) != set(costs_b):
        raise ValueError("method cost tables cover different problems")
    out = []
    for p in sorted(costs_a):
        a, b = costs_a[p], costs_b[p]
        fa, fb = _is_fail(a), _is_fail(b)
        if fa and fb:
            v = 0.0
        elif fa:
            v = -cap
        elif fb:
            v = cap
        elif a == b:
            v = 0.0
        elif a == 0 or b == 0:
            v = cap if a == 0 else -cap
        else:
            v = float(np.clip(-math.log2(a / b), -cap, cap))
        out.append((p, v))
    return out


def branch_statistics(trace) -> dict:
    if not trace:
        raise ValueError("empty trace")
    n = len(trace)
    return {
        "unit_step_fraction": sum(r.alpha == 1.0 for r in trace) / n,
        "modified_fraction": sum(r.branch == MODIFIED for r in trace) / n,
        "final_tau": float(trace[-1].tau),
        "final_gamma": float(trace[-1].gamma),
    }
