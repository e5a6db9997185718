"""Comparison methods built on the same estimates, KKT solves and trace schema.

* ``sqp_l1``: l1-merit SQP with the classical sufficient-decrease test at
  every iteration.
* ``second_order_correction``: when the unit step fails, add the
  minimum-norm correction ``d_hat = -J^T (J J^T)^{-1} c(x + d)`` and search
  along the arc ``x + a d + a^2 d_hat``.
* ``watchdog``: relaxed unit steps tested against the merit at an anchor
  point; after ``window`` consecutive failures, return to the anchor and
  backtrack there.
* ``auglag``: line search on ``f + y'c + (r/2)||c||^2`` over ``(x, y)``
  jointly, with ``r`` doubled until the directional derivative is
  sufficiently negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .merit import (CLASSICAL, MeritState, RelaxationBudget, backtrack,
                    classical_rhs, merit_phi, model_reduction, relaxation_eps_A,
                    update_merit_parameter)
from .problem_core import PrimalDual
from .solver import (UNIT_CLASSICAL, SolverConfig, _record, compute_step,
                     curvature_terms, run_iterations, solve)

METHODS = ("ours", "sqp-l1", "soc", "watchdog", "auglag")


@dataclass
class BaselineConfig:
    method: str = "sqp_l1"
    watchdog_relaxed_steps: int = 5
    auglag_penalty_init: float = 1e6
    auglag_penalty_cap: float = 1e12
    auglag_penalty_floor: float = 1.0
    auglag_damping: bool = False
    auglag_descent_factor: float = 1e-8
    soc_enabled: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.watchdog_relaxed_steps < 1:
            raise ValueError("watchdog_relaxed_steps must be >= 1")
        if self.auglag_penalty_init <= 0:
            raise ValueError("auglag_penalty_init must be positive")


def _as_baseline(config) -> BaselineConfig:
    if config is None:
        return BaselineConfig()
    if isinstance(config, SolverConfig):
        return BaselineConfig(solver=config)
    return config


class _L1Context:
    """Quantities of the l1 merit at one iteration."""

    def __init__(self, run, pt, step, mstate):
        cfg = run.config
        self.ms = update_merit_parameter(mstate, pt.g, step.d, float(step.d @ step.W @ step.d),
                                         float(np.sum(np.abs(pt.c))))
        self.tau = self.ms.tau
        self.delta_l = model_reduction(self.tau, pt.g, step.d, pt.c)
        self.eps_A = relaxation_eps_A(RelaxationBudget(pt.eps_f, pt.eps_g, cfg.surrogates),
                                      self.tau)
        self.phi0 = merit_phi(pt.f, pt.c, self.tau)
        self.dHd, self.sum_abs = curvature_terms(pt, step.d)


def solve_sqp_l1(oracle, start=None, config=None):
    bc = _as_baseline(config)
    cfg = bc.solver
    state = {"merit": MeritState(cfg.tau_init, cfg.tau_init, cfg.sigma, cfg.eps_tau)}

    def iterate(run, k, pt, measures):
        step = compute_step(pt, run.w.y, cfg)
        ctx = _L1Context(run, pt, step, state["merit"])
        state["merit"] = ctx.ms
        d = step.d
        cache = {}

        def classical(alpha):
            if alpha not in cache:
                cache[alpha] = run.ev.merit(pt.x + alpha * d, ctx.tau, pt.S_f)
            return cache[alpha], classical_rhs(ctx.phi0, alpha, ctx.delta_l, cfg.eta, ctx.eps_A)

        ls = backtrack(classical, cfg.nu_alpha, 1.0, cfg.max_backtracks, CLASSICAL)
        _record(run, k, pt, step, measures, np.nan, ctx.tau, ctx.ms.tau_trial, ls.alpha,
                CLASSICAL, ls.backtracks, ctx.phi0, ls.lhs, ctx.delta_l, ctx.dHd, ctx.sum_abs,
                ctx.eps_A, ls.lhs, ls.rhs)
        run.w = PrimalDual(pt.x + ls.alpha * d, run.w.y + step.delta)

    return run_iterations(oracle, start, cfg, "sqp-l1", iterate)


def correction_step(J, c_trial):
    """Minimum-norm ``d_hat`` with ``J d_hat = -c(x + d)``."""
    if J.shape[0] == 0:
        return np.zeros(J.shape[1])
    return -J.T @ np.linalg.solve(J @ J.T, c_trial)


def solve_second_order_correction(oracle, start=None, config=None):
    bc = _as_baseline(config)
    cfg = bc.solver
    state = {"merit": MeritState(cfg.tau_init, cfg.tau_init, cfg.sigma, cfg.eps_tau)}

    def iterate(run, k, pt, measures):
        step = compute_step(pt, run.w.y, cfg)
        ctx = _L1Context(run, pt, step, state["merit"])
        state["merit"] = ctx.ms
        d = step.d
        x1 = pt.x + d
        f1, c1 = run.ev.f_trial(x1, pt.S_f), oracle.cons(x1)
        phi1 = merit_phi(f1, c1, ctx.tau)
        rhs1 = classical_rhs(ctx.phi0, 1.0, ctx.delta_l, cfg.eta, ctx.eps_A)
        if phi1 <= rhs1:
            alpha, bt, lhs, rhs, phase = 1.0, 0, phi1, rhs1, "unit"
        else:
            d_hat = correction_step(pt.J, c1) if bc.soc_enabled else np.zeros_like(d)
            cache = {1.0: phi1} if not bc.soc_enabled else {}

            def arc(alpha):
                if alpha not in cache:
                    cache[alpha] = run.ev.merit(pt.x + alpha * d + alpha ** 2 * d_hat,
                                                ctx.tau, pt.S_f)
                return cache[alpha], classical_rhs(ctx.phi0, alpha, ctx.delta_l, cfg.eta,
                                                   ctx.eps_A)

            ls = backtrack(arc, cfg.nu_alpha, 1.0, cfg.max_backtracks, CLASSICAL)
            alpha, bt, lhs, rhs, phase = ls.alpha, ls.backtracks, ls.lhs, ls.rhs, "correction"
            step_x = alpha * d + alpha ** 2 * d_hat
        if phase == "unit":
            step_x = d
        _record(run, k, pt, step, measures, np.nan, ctx.tau, ctx.ms.tau_trial, alpha, CLASSICAL,
                bt, ctx.phi0, lhs, ctx.delta_l, ctx.dHd, ctx.sum_abs, ctx.eps_A, lhs, rhs,
                phase=phase)
        run.w = PrimalDual(pt.x + step_x, run.w.y + step.delta)

    return run_iterations(oracle, start, cfg, "soc", iterate)


def solve_watchdog(oracle, start=None, config=None):
    """Watchdog with the anchor-merit test.

    The merit at the anchor and its model reduction are re-evaluated with the
    current merit parameter.  A restart backtracks from the anchor along the
    anchor's direction starting at ``nu_alpha`` (the unit step from the anchor
    has already been taken and rejected).
    """
    bc = _as_baseline(config)
    cfg = bc.solver
    window = bc.watchdog_relaxed_steps
    state = {"merit": MeritState(cfg.tau_init, cfg.tau_init, cfg.sigma, cfg.eps_tau),
             "anchor": None, "relaxed": 0}

    def iterate(run, k, pt, measures):
        step = compute_step(pt, run.w.y, cfg)
        ctx = _L1Context(run, pt, step, state["merit"])
        state["merit"] = ctx.ms
        tau = ctx.tau
        if state["relaxed"] == 0:
            state["anchor"] = {"pt": pt, "step": step, "y": run.w.y.copy()}
        a = state["anchor"]
        a_pt, a_step = a["pt"], a["step"]
        phi_a = merit_phi(a_pt.f, a_pt.c, tau)
        dl_a = model_reduction(tau, a_pt.g, a_step.d, a_pt.c)
        d = step.d
        phi1 = run.ev.merit(pt.x + d, tau, pt.S_f)
        rhs1 = classical_rhs(phi_a, 1.0, dl_a, cfg.eta, ctx.eps_A)
        if phi1 <= rhs1:
            state["relaxed"] = 0
            _record(run, k, pt, step, measures, np.nan, tau, ctx.ms.tau_trial, 1.0,
                    UNIT_CLASSICAL, 0, ctx.phi0, phi1, ctx.delta_l, ctx.dHd, ctx.sum_abs,
                    ctx.eps_A, phi1, rhs1, phase="accept")
            run.w = PrimalDual(pt.x + d, run.w.y + step.delta)
            return
        state["relaxed"] += 1
        if state["relaxed"] < window:
            _record(run, k, pt, step, measures, np.nan, tau, ctx.ms.tau_trial, 1.0,
                    UNIT_CLASSICAL, 0, ctx.phi0, phi1, ctx.delta_l, ctx.dHd, ctx.sum_abs,
                    ctx.eps_A, phi1, rhs1, phase="relaxed")
            run.w = PrimalDual(pt.x + d, run.w.y + step.delta)
            return
        # restart from the anchor with a strict line search
        cache = {}

        def classical(alpha):
            if alpha not in cache:
                cache[alpha] = run.ev.merit(a_pt.x + alpha * a_step.d, tau, a_pt.S_f)
            return cache[alpha], classical_rhs(phi_a, alpha, dl_a, cfg.eta, ctx.eps_A)

        ls = backtrack(classical, cfg.nu_alpha, cfg.nu_alpha, cfg.max_backtracks - 1, CLASSICAL)
        state["relaxed"] = 0
        _record(run, k, pt, step, measures, np.nan, tau, ctx.ms.tau_trial, ls.alpha,
                CLASSICAL, ls.backtracks + 1, phi_a, ls.lhs,
                dl_a, ctx.dHd, ctx.sum_abs, ctx.eps_A, ls.lhs, ls.rhs, phase="restart")
        run.w = PrimalDual(a_pt.x + ls.alpha * a_step.d, a["y"] + a_step.delta)

    return run_iterations(oracle, start, cfg, "watchdog", iterate)


def auglag_merit(f, y, c, r):
    return float(f + y @ c + 0.5 * r * (c @ c))


def solve_auglag_merit(oracle, start=None, config=None):
    """Augmented-Lagrangian merit over ``(x, y)``; both move by ``alpha``.

    ``r`` starts at ``auglag_penalty_init`` and doubles (up to the cap) until
    ``D = (g + J'y + r J'c)'d + c'delta <= -1e-8 ||(d, delta)||^2``; it never
    decreases unless ``auglag_damping`` is set, in which case it is first
    multiplied by ``min(1, (k+1)/sqrt(r))``.
    """
    bc = _as_baseline(config)
    cfg = bc.solver
    state = {"r": bc.auglag_penalty_init}

    def iterate(run, k, pt, measures):
        step = compute_step(pt, run.w.y, cfg)
        d, delta, y = step.d, step.delta, run.w.y
        r = state["r"]
        if bc.auglag_damping:
            # optional Schittkowski-style shrinking of a large penalty
            r = max(min(1.0, (k + 1) / np.sqrt(r)) * r, bc.auglag_penalty_floor)
        target = -bc.auglag_descent_factor * (d @ d + delta @ delta)

        def slope(r):
            return float((pt.g + pt.J.T @ y + r * pt.J.T @ pt.c) @ d + pt.c @ delta)

        D = slope(r)
        # the r-term of D is -r||c||^2 (since Jd = -c), so doubling is useless when c = 0
        while D > target and r < bc.auglag_penalty_cap and np.any(pt.c != 0):
            r = min(2.0 * r, bc.auglag_penalty_cap)
            D = slope(r)
        state["r"] = r
        phi0 = auglag_merit(pt.f, y, pt.c, r)
        cache = {}

        def armijo(alpha):
            if alpha not in cache:
                xt = pt.x + alpha * d
                cache[alpha] = auglag_merit(run.ev.f_trial(xt, pt.S_f), y + alpha * delta,
                                            oracle.cons(xt), r)
            return cache[alpha], phi0 + cfg.eta * alpha * D

        ls = backtrack(armijo, cfg.nu_alpha, 1.0, cfg.max_backtracks, CLASSICAL)
        dHd, sum_abs = curvature_terms(pt, d)
        _record(run, k, pt, step, measures, np.nan, np.nan, np.nan, ls.alpha, CLASSICAL,
                ls.backtracks, phi0, ls.lhs, -D, dHd, sum_abs, 0.0, ls.lhs, ls.rhs, penalty=r)
        run.w = PrimalDual(pt.x + ls.alpha * d, y + ls.alpha * delta)

    return run_iterations(oracle, start, cfg, "auglag", iterate)


_DISPATCH = {
    "sqp-l1": solve_sqp_l1,
    "sqp_l1": solve_sqp_l1,
    "soc": solve_second_order_correction,
    "second_order_correction": solve_second_order_correction,
    "watchdog": solve_watchdog,
    "auglag": solve_auglag_merit,
}


def run_method(method: str, oracle, start=None, config=None):
    """Dispatch by CLI key; ``ours`` is the modified line-search method."""
    if method == "ours":
        cfg = config.solver if isinstance(config, BaselineConfig) else config
        return solve(oracle, start, cfg)
    try:
        fn = _DISPATCH[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}") from None
    return fn(oracle, start, config)
