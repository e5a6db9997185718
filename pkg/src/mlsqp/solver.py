"""Modified line-search SQP driver and shared per-iteration machinery.

The evaluation layer (:class:`Evaluator`) and step computation
(:func:`compute_step`) are shared with :mod:`mlsqp.baselines` so that every
method uses the same estimates, KKT solves and counters.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import kkt
from .merit import (CLASSICAL, MODIFIED, UNIT_CLASSICAL, BoundSurrogates, LineSearchFailure,
                    MeritState, RelaxationBudget, backtrack, classical_rhs, merit_phi,
                    model_reduction, modified_rhs, relaxation_eps_A, update_merit_parameter)
from .minres import MinresConfig, NumericalBreakdown, solve_minres
from .problem_core import FiniteSumOracle, PrimalDual, ProblemOracle
from .problem_suite import StartSpec, default_start
from .sampling import (BoundConstants, STREAMS, draw_samples,
                       error_bounds, estimate_bound_constants, parse_schedule_key)

# status values
CONVERGED = "converged"
ITERATION_LIMIT = "iteration_limit"
LICQ_FAILURE = "licq_failure"
LINESEARCH_FAILURE = "linesearch_failure"
ILL_POSED = "ill_posed"
BUDGET_EXHAUSTED = "budget_exhausted"
NUMERICAL_FAILURE = "numerical_failure"

# branch values
CLASSICAL_LARGE_D = "classical_large_d"
UNIT_FORCED = "unit_forced"


@dataclass
class SamplingConfig:
    """Schedule keys for the f, g and H sample sets (see ``parse_schedule_key``)."""

    f: str = "full"
    g: str = "full"
    H: str = "full"
    bound_constants: BoundConstants | None = None   # None: estimate at x0 when needed


@dataclass
class SolverConfig:
    tau_init: float = 1.0
    eta: float = 1e-4
    nu_alpha: float = 0.5
    nu_gamma: float = 0.7
    gamma0_factor: float = 0.999
    sigma: float = 0.5
    eps_tau: float = 0.5
    max_iterations: int = 100
    termination_tol: float = 1e-6
    max_backtracks: int = 60
    solve_mode: str = "dense"                 # "dense" or "minres"
    minres: MinresConfig = field(default_factory=MinresConfig)
    hessian: str = "exact"                    # "exact" or "identity"
    sampling: SamplingConfig | None = None
    surrogates: BoundSurrogates = field(default_factory=BoundSurrogates)
    budget_fevals: float | None = None        # in full-evaluation equivalents
    budget_hevals: float | None = None
    budget_minres: int | None = None
    force_unit_step: bool = False
    modified_hessian: str = "available"       # dHd term: "available" or "exact"
    zeta_min: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("eta", "nu_alpha", "nu_gamma", "gamma0_factor", "sigma", "eps_tau"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.tau_init <= 0 or self.termination_tol <= 0:
            raise ValueError("tau_init and termination_tol must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.solve_mode not in ("dense", "minres"):
            raise ValueError(f"unknown solve_mode {self.solve_mode!r}")
        if self.hessian not in ("exact", "identity"):
            raise ValueError(f"unknown hessian mode {self.hessian!r}")
        if self.modified_hessian not in ("available", "exact"):
            raise ValueError(f"unknown modified_hessian {self.modified_hessian!r}")


@dataclass
class IterationRecord:
    k: int
    x: list
    y: list
    d_norm: float
    gamma: float
    tau: float
    tau_trial: float
    alpha: float
    branch: str
    backtracks: int
    feasibility: float
    stationarity: float
    size_f: int
    size_g: int
    size_H: int
    f_evals: float
    g_evals: float
    H_evals: float
    regularization: float
    minres_iterations: int
    phi_current: float
    phi_trial: float
    delta_l: float
    dWd: float
    dHd: float
    sum_abs_dCid: float
    c_l1: float
    eps_A: float
    lhs: float
    rhs: float
    dual_step: list
    phase: str = ""
    penalty: float = float("nan")
    hessian_source: str = ""      # Hessian behind dHd: exact, subsampled or identity


TRACE_COLUMNS = [f.name for f in fields(IterationRecord)]
_VECTOR_COLUMNS = {"x", "y", "dual_step"}
_INT_COLUMNS = {"k", "backtracks", "size_f", "size_g", "size_H", "minres_iterations"}
_STR_COLUMNS = {"branch", "phase", "hessian_source"}


@dataclass
class SolveOutcome:
    status: str
    iterations: int
    final: PrimalDual
    trace: list
    method: str = "ours"
    message: str = ""
    final_feasibility: float = float("nan")
    final_stationarity: float = float("nan")
    counters: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def summary(self) -> dict:
        return {
            "method": self.method,
            "status": self.status,
            "iterations": self.iterations,
            "final_feasibility": self.final_feasibility,
            "final_stationarity": self.final_stationarity,
            "counters": self.counters,
            "message": self.message,
            "x": [float(v) for v in self.final.x],
            "y": [float(v) for v in self.final.y],
        }


# ---------------------------------------------------------------------------
# Termination and diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TerminationReference:
    stationarity0: float
    feasibility0: float


def kkt_measures(g, J, y, c):
    stat = float(np.max(np.abs(g + J.T @ y))) if g.size else 0.0
    feas = float(np.max(np.abs(c))) if c.size else 0.0
    return stat, feas


def termination_check(g, J, y, c, reference: TerminationReference, tol: float = 1e-6) -> bool:
    stat, feas = kkt_measures(np.asarray(g, float), np.asarray(J, float).reshape(len(c), len(g)),
                              np.asarray(y, float), np.asarray(c, float))
    return (stat <= tol * max(1.0, reference.stationarity0)
            and feas <= tol * max(1.0, reference.feasibility0))


def superlinear_diagnostic(trace, reference: PrimalDual | None, final: PrimalDual | None = None):
    """Ratios ``||w_{k+1} - w*|| / ||w_k - w*||`` along the trace.

    The trace stores iterates before each step, so ``final`` (the last
    iterate) closes the sequence when given.
    """
    if reference is None:
        raise ValueError("reference solution required")
    w_star = reference.stack()
    ws = [np.concatenate([np.asarray(r.x, float), np.asarray(r.y, float)]) for r in trace]
    if final is not None and ws:
        ws.append(final.stack())
    errs = [float(np.linalg.norm(w - w_star)) for w in ws]
    return [errs[i + 1] / errs[i] for i in range(len(errs) - 1) if errs[i] > 0]


# ---------------------------------------------------------------------------
# Evaluation layer
# ---------------------------------------------------------------------------

@dataclass
class PointData:
    x: np.ndarray
    f: float
    g: np.ndarray
    c: np.ndarray
    J: np.ndarray
    H: np.ndarray            # objective Hessian in use (exact, subsampled or identity)
    C: np.ndarray            # constraint Hessians, shape (m, n, n)
    S_f: np.ndarray | None
    sizes: tuple
    eps_f: float = 0.0
    eps_g: float = 0.0
    H_source: str = "exact"


class Evaluator:
    """Produces the estimates of one iteration and merit values at trial points."""

    def __init__(self, oracle: ProblemOracle, config: SolverConfig, x0=None):
        self.oracle = oracle
        self.config = config
        self.schedules = None
        self.constants = None
        samp = config.sampling
        if samp is not None:
            if not isinstance(oracle, FiniteSumOracle):
                if any(k != "full" for k in (samp.f, samp.g, samp.H)):
                    raise ValueError("sampling schedules need a finite-sum oracle")
            else:
                N = oracle.N
                horizon = max(config.max_iterations, 1)
                self.schedules = {k: parse_schedule_key(getattr(samp, k), N, horizon)
                                  for k in ("f", "g", "H")}
                needs_bounds = any(not s.is_full for s in (self.schedules["f"], self.schedules["g"]))
                if samp.bound_constants is not None:
                    self.constants = samp.bound_constants
                elif needs_bounds and x0 is not None:
                    self.constants = estimate_bound_constants(oracle, x0, seed=config.seed)

    def _sizes(self, k):
        if self.schedules is None:
            return None
        return tuple(self.schedules[s].size(k) for s in ("f", "g", "H"))

    def at(self, x, k: int, need_hessian: bool = True) -> PointData:
        o, cfg = self.oracle, self.config
        sizes = self._sizes(k)
        S_f = None
        if sizes is None:
            f, g = o.f(x), o.grad(x)
            H = None
            if need_hessian and cfg.hessian == "exact":
                H = o.hess(x)
            n_all = getattr(o, "N", 1)
            sizes_rec = (n_all, n_all, n_all if cfg.hessian == "exact" else 0)
            eps_f = eps_g = 0.0
        else:
            N = o.N
            S_f = draw_samples(N, sizes[0], cfg.seed, k, STREAMS["f"])
            S_g = draw_samples(N, sizes[1], cfg.seed, k, STREAMS["g"])
            f, g = o.f_sample(x, S_f), o.grad_sample(x, S_g)
            H = None
            if need_hessian and cfg.hessian == "exact":
                S_H = draw_samples(N, sizes[2], cfg.seed, k, STREAMS["H"])
                H = o.hess_sample(x, S_H)
            sizes_rec = (sizes[0], sizes[1], sizes[2] if cfg.hessian == "exact" else 0)
            if self.constants is not None:
                eps_f, eps_g, _ = error_bounds(N, sizes, self.constants)
            else:
                eps_f = eps_g = 0.0
        if H is None:
            H = np.eye(o.n)
            source = "identity"
        else:
            source = "exact" if sizes is None or sizes[2] == o.N else "subsampled"
        c, J = o.cons(x), o.jac(x)
        C = o.cons_hess(x) if (need_hessian and o.m) else np.zeros((o.m, o.n, o.n))
        return PointData(np.asarray(x, float).copy(), f, g, c, J, H, C, S_f, sizes_rec,
                         eps_f, eps_g, source)

    def f_trial(self, x, S_f) -> float:
        if S_f is None:
            return self.oracle.f(x)
        return self.oracle.f_sample(x, S_f)

    def merit(self, x, tau, S_f):
        return merit_phi(self.f_trial(x, S_f), self.oracle.cons(x), tau)

    def budget_exceeded(self) -> bool:
        cfg, cnt = self.config, self.oracle.counters
        if cfg.budget_fevals is not None and cnt.f > cfg.budget_fevals + 1e-9:
            return True
        if cfg.budget_hevals is not None and cnt.H > cfg.budget_hevals + 1e-9:
            return True
        return False


@dataclass
class StepData:
    d: np.ndarray
    delta: np.ndarray
    W: np.ndarray
    regularization: float
    minres_iterations: int
    system: kkt.KktSystem


def compute_step(pt: PointData, y, config: SolverConfig) -> StepData:
    W = pt.H.copy()
    if pt.C.shape[0]:
        W = W + np.tensordot(y, pt.C, axes=1)
    system = kkt.build_system(W, pt.J, pt.g, y, pt.c)
    system = kkt.regularize(system, zeta_min=config.zeta_min)
    if config.solve_mode == "dense":
        sol = kkt.solve_dense(system)
        its = 0
    else:
        sol, report = solve_minres(system, config.minres)
        its = report.iterations_used
    return StepData(sol.d, sol.delta, system.W, system.regularization, its, system)


def curvature_terms(pt: PointData, d, H=None):
    """``d'Hd`` (with ``pt.H`` unless ``H`` is given) and ``sum_i |d'C_i d|``."""
    dHd = float(d @ (pt.H if H is None else H) @ d)
    s = float(np.sum(np.abs(np.einsum("i,kij,j->k", d, pt.C, d)))) if pt.C.shape[0] else 0.0
    return dHd, s


def resolve_start(oracle, start) -> PrimalDual:
    if start is None:
        start = default_start(oracle)
    if isinstance(start, PrimalDual):
        return start.copy()
    if isinstance(start, StartSpec):
        if start.y0 is not None and start.y0_rule != "explicit":
            return PrimalDual(start.x0, start.y0)
        return start.resolve(oracle)
    raise TypeError("start must be a StartSpec or PrimalDual")


class _Run:
    """Bookkeeping shared by every method: trace, counters, status."""

    def __init__(self, oracle, start, config, method):
        self.oracle = oracle
        self.config = config
        self.method = method
        self.w = resolve_start(oracle, start)
        if self.w.x.shape[0] != oracle.n or self.w.y.shape[0] != oracle.m:
            raise ValueError("start point has the wrong dimensions")
        self.ev = Evaluator(oracle, config, self.w.x)
        self.trace = []
        self.reference = None
        self.last_counts = oracle.counters.snapshot()

    def counter_delta(self):
        now = self.oracle.counters.snapshot()
        delta = {k: now[k] - self.last_counts[k] for k in now}
        self.last_counts = now
        return delta

    def check(self, pt: PointData, y) -> tuple:
        stat, feas = kkt_measures(pt.g, pt.J, y, pt.c)
        if self.reference is None:
            self.reference = TerminationReference(stat, feas)
        tol = self.config.termination_tol
        done = (stat <= tol * max(1.0, self.reference.stationarity0)
                and feas <= tol * max(1.0, self.reference.feasibility0))
        return done, stat, feas

    def outcome(self, status, k, message="", measures=(np.nan, np.nan)):
        return SolveOutcome(status, k, self.w.copy(), self.trace, self.method, message,
                            measures[1], measures[0], self.oracle.counters.snapshot())


def _record(run, k, pt, step, measures, gamma, tau, tau_trial, alpha, branch, backtracks,
            phi_current, phi_trial, delta_l, dHd, sum_abs, eps_A, lhs, rhs, phase="",
            penalty=float("nan"), hessian_source=None):
    delta_counts = run.counter_delta()
    rec = IterationRecord(
        k=k, x=[float(v) for v in pt.x], y=[float(v) for v in run.w.y],
        d_norm=float(np.linalg.norm(step.d)), gamma=float(gamma), tau=float(tau),
        tau_trial=float(tau_trial), alpha=float(alpha), branch=branch,
        backtracks=int(backtracks), feasibility=measures[1], stationarity=measures[0],
        size_f=int(pt.sizes[0]), size_g=int(pt.sizes[1]), size_H=int(pt.sizes[2]),
        f_evals=delta_counts["f"], g_evals=delta_counts["g"], H_evals=delta_counts["H"],
        regularization=float(step.regularization), minres_iterations=int(step.minres_iterations),
        phi_current=float(phi_current), phi_trial=float(phi_trial), delta_l=float(delta_l),
        dWd=float(step.d @ step.W @ step.d), dHd=float(dHd), sum_abs_dCid=float(sum_abs),
        c_l1=float(np.sum(np.abs(pt.c))), eps_A=float(eps_A), lhs=float(lhs), rhs=float(rhs),
        dual_step=[float(v) for v in step.delta], phase=phase, penalty=float(penalty),
        hessian_source=pt.H_source if hessian_source is None else hessian_source)
    run.trace.append(rec)
    return rec


def run_iterations(oracle, start, config: SolverConfig, method: str, iterate) -> SolveOutcome:
    """Generic outer loop.  ``iterate(run, k, pt, measures)`` performs one step
    (updating ``run.w``) or raises one of the recognized failures."""
    run = _Run(oracle, start, config, method)
    measures = (np.nan, np.nan)
    k = 0
    try:
        while True:
            pt = run.ev.at(run.w.x, k)
            done, stat, feas = run.check(pt, run.w.y)
            measures = (stat, feas)
            if done:
                return run.outcome(CONVERGED, k, measures=measures)
            if k >= config.max_iterations:
                return run.outcome(ITERATION_LIMIT, k, measures=measures)
            if run.ev.budget_exceeded():
                return run.outcome(BUDGET_EXHAUSTED, k, "evaluation budget", measures)
            if config.budget_minres is not None and \
                    sum(r.minres_iterations for r in run.trace) >= config.budget_minres:
                return run.outcome(BUDGET_EXHAUSTED, k, "MINRES budget", measures)
            iterate(run, k, pt, measures)
            k += 1
    except kkt.LicqFailure as exc:
        return run.outcome(LICQ_FAILURE, k, str(exc), measures)
    except kkt.IllPosedSubproblem as exc:
        return run.outcome(ILL_POSED, k, str(exc), measures)
    except LineSearchFailure as exc:
        return run.outcome(LINESEARCH_FAILURE, k, str(exc), measures)
    except (kkt.SingularSystem, NumericalBreakdown, FloatingPointError) as exc:
        return run.outcome(NUMERICAL_FAILURE, k, str(exc), measures)


# ---------------------------------------------------------------------------
# The modified line-search method
# ---------------------------------------------------------------------------

def solve(oracle: ProblemOracle, start=None, config: SolverConfig | None = None) -> SolveOutcome:
    """Modified line-search SQP.

    Per iteration: estimates, KKT step, merit-parameter update, then
    ``||d|| > gamma``: classical backtracking; else unit step if it passes the
    classical test; else modified backtracking and ``gamma *= nu_gamma``.
    Duals always take the full step.
    """
    config = SolverConfig() if config is None else config
    state = {"merit": MeritState(config.tau_init, config.tau_init, config.sigma, config.eps_tau),
             "gamma": None}

    def iterate(run, k, pt, measures):
        step = compute_step(pt, run.w.y, config)
        d = step.d
        dWd = float(d @ step.W @ d)
        c_l1 = float(np.sum(np.abs(pt.c)))
        ms = update_merit_parameter(state["merit"], pt.g, d, dWd, c_l1)
        state["merit"] = ms
        tau = ms.tau
        if state["gamma"] is None:
            state["gamma"] = config.gamma0_factor * float(np.linalg.norm(d))
        gamma = state["gamma"]
        delta_l = model_reduction(tau, pt.g, d, pt.c)
        eps_A = relaxation_eps_A(RelaxationBudget(pt.eps_f, pt.eps_g, config.surrogates), tau)
        phi0 = merit_phi(pt.f, pt.c, tau)
        H_source = pt.H_source
        if config.modified_hessian == "exact" and H_source == "subsampled":
            dHd, sum_abs = curvature_terms(pt, d, run.oracle.hess(pt.x))
            H_source = "exact"
        else:
            dHd, sum_abs = curvature_terms(pt, d)
        d_norm = float(np.linalg.norm(d))
        trial_phi = {}

        def phi_at(alpha):
            if alpha not in trial_phi:
                trial_phi[alpha] = run.ev.merit(pt.x + alpha * d, tau, pt.S_f)
            return trial_phi[alpha]

        def classical(alpha):
            return phi_at(alpha), classical_rhs(phi0, alpha, delta_l, config.eta, eps_A)

        def modified(alpha):
            return phi_at(alpha), modified_rhs(phi0, alpha, delta_l, config.eta, tau, dHd,
                                               sum_abs, eps_A)

        if config.force_unit_step:
            lhs, rhs = classical(1.0)
            res_alpha, res_bt, branch = 1.0, 0, UNIT_FORCED
        elif d_norm > gamma:
            ls = backtrack(classical, config.nu_alpha, 1.0, config.max_backtracks, CLASSICAL)
            res_alpha, res_bt, branch, lhs, rhs = ls.alpha, ls.backtracks, CLASSICAL_LARGE_D, ls.lhs, ls.rhs
        else:
            lhs, rhs = classical(1.0)
            if lhs <= rhs:
                res_alpha, res_bt, branch = 1.0, 0, UNIT_CLASSICAL
            else:
                ls = backtrack(modified, config.nu_alpha, 1.0, config.max_backtracks, MODIFIED)
                res_alpha, res_bt, branch, lhs, rhs = ls.alpha, ls.backtracks, MODIFIED, ls.lhs, ls.rhs
                state["gamma"] = config.nu_gamma * gamma
        phi_trial = phi_at(res_alpha)
        _record(run, k, pt, step, measures, gamma, tau, ms.tau_trial, res_alpha, branch, res_bt,
                phi0, phi_trial, delta_l, dHd, sum_abs, eps_A, lhs, rhs,
                hessian_source=H_source)
        run.w = PrimalDual(pt.x + res_alpha * d, run.w.y + step.delta)

    return run_iterations(oracle, start, config, "ours", iterate)


# ---------------------------------------------------------------------------
# Trace I/O
# ---------------------------------------------------------------------------

def _fmt(name, value):
    if name in _VECTOR_COLUMNS:
        return " ".join(repr(float(v)) for v in value)
    if name in _STR_COLUMNS:
        return value
    if name in _INT_COLUMNS:
        return str(int(value))
    return repr(float(value))


def write_trace_csv(trace, target) -> None:
    """One row per iteration, columns in ``TRACE_COLUMNS`` order.

    Vector columns hold space-separated floats; all floats use ``repr`` so
    that reading back is lossless.
    """
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    fh = open(target, "w", newline="") if own else target
    try:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for rec in trace:
            writer.writerow([_fmt(c, getattr(rec, c)) for c in TRACE_COLUMNS])
    finally:
        if own:
            fh.close()


def read_trace_csv(source) -> list:
    own = isinstance(source, (str, bytes)) or hasattr(source, "__fspath__")
    fh = open(source, newline="") if own else source
    try:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_COLUMNS:
            raise ValueError("trace header does not match the schema")
        out = []
        for row in reader:
            kw = {}
            for name, val in zip(header, row):
                if name in _VECTOR_COLUMNS:
                    kw[name] = [float(v) for v in val.split()] if val else []
                elif name in _STR_COLUMNS:
                    kw[name] = val
                elif name in _INT_COLUMNS:
                    kw[name] = int(val)
                else:
                    kw[name] = float(val)
            out.append(IterationRecord(**kw))
        return out
    finally:
        if own:
            fh.close()


def trace_to_csv_string(trace) -> str:
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    return buf.getvalue()


def write_summary_json(outcome: SolveOutcome, path, extra: dict | None = None) -> dict:
    data = outcome.summary()
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
    return data


def record_dict(rec: IterationRecord) -> dict:
    return asdict(rec)
