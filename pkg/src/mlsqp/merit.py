"""l1 merit function, merit-parameter update and line-search conditions."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class LineSearchFailure(RuntimeError):
    pass


CLASSICAL = "classical"
MODIFIED = "modified"
UNIT_CLASSICAL = "unit_classical"


@dataclass(frozen=True)
class MeritState:
    tau: float = 1.0
    tau_prev: float = 1.0
    sigma: float = 0.5
    eps_tau: float = 0.5
    tau_trial: float = np.inf

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not (0 < self.sigma < 1 and 0 < self.eps_tau < 1):
            raise ValueError("sigma and eps_tau must lie in (0, 1)")


@dataclass
class LineSearchResult:
    alpha: float
    backtracks: int
    condition: str
    lhs: float
    rhs: float


@dataclass(frozen=True)
class BoundSurrogates:
    """Stand-ins for the unknown constants entering ``eps_A``."""

    kJ_kc: float = 1.0     # kappa_{J+} kappa_c
    zeta: float = 1.0
    kappa_g: float = 1.0
    kappa_W: float = 1.0


@dataclass(frozen=True)
class RelaxationBudget:
    eps_f: float = 0.0
    eps_g: float = 0.0
    bound_constants: BoundSurrogates = BoundSurrogates()

    def __post_init__(self):
        if self.eps_f < 0 or self.eps_g < 0:
            raise ValueError("error bounds must be nonnegative")


def merit_phi(f: float, c, tau: float) -> float:
    """``tau f + ||c||_1``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return float(tau * f + np.sum(np.abs(c)))


def model_reduction(tau: float, g, d, c) -> float:
    """Reduction of the linearized merit model, ``-tau g'd + ||c||_1``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return float(-tau * np.dot(g, d) + np.sum(np.abs(c)))


def tau_trial_value(gd: float, dWd: float, c_l1: float, sigma: float) -> float:
    """Largest merit parameter for which the model reduction is large enough.

    Returns ``inf`` when ``g'd + max(d'Wd, 0)`` is nonpositive.  A denominator
    that is positive only at the level of cancellation error is treated as
    nonpositive, and so is the case ``c = 0`` (where any positive tau works).
    """
    curv = max(dWd, 0.0)
    denom = gd + curv
    scale = abs(gd) + curv
    if denom <= 1e-14 * scale or denom <= 0.0 or c_l1 == 0.0:
        return np.inf
    return (1.0 - sigma) * c_l1 / denom


def update_merit_parameter(state: MeritState, g, d, dWd: float, c_l1: float) -> MeritState:
    trial = tau_trial_value(float(np.dot(g, d)), float(dWd), float(c_l1), state.sigma)
    if state.tau <= trial:
        tau = state.tau
    else:
        tau = (1.0 - state.eps_tau) * trial
    return replace(state, tau=tau, tau_prev=state.tau, tau_trial=trial)


def relaxation_eps_A(budget: RelaxationBudget, tau: float) -> float:
    b = budget.bound_constants
    eg, ef = budget.eps_g, budget.eps_f
    if eg == 0.0 and ef == 0.0:
        return 0.0
    coef = b.kJ_kc + (b.kappa_g + eg + b.kappa_W * b.kJ_kc) / b.zeta
    return float(tau * coef * eg + 2.0 * tau * ef)


def classical_rhs(phi_current, alpha, delta_l, eta, eps_A=0.0):
    return phi_current - eta * alpha * delta_l + eps_A


def modified_rhs(phi_current, alpha, delta_l, eta, tau, dHd, sum_abs_dCid, eps_A=0.0):
    return (classical_rhs(phi_current, alpha, delta_l, eta, eps_A)
            + 0.5 * alpha ** 2 * tau * dHd + 0.5 * alpha ** 2 * sum_abs_dCid)


def classical_condition(phi_trial, phi_current, alpha, delta_l, eta, eps_A=0.0) -> bool:
    return bool(phi_trial <= classical_rhs(phi_current, alpha, delta_l, eta, eps_A))


def modified_condition(phi_trial, phi_current, alpha, delta_l, eta, tau, dHd,
                       sum_abs_dCid, eps_A=0.0) -> bool:
    if sum_abs_dCid < 0:
        raise ValueError("sum_abs_dCid must be nonnegative")
    return bool(phi_trial <= modified_rhs(phi_current, alpha, delta_l, eta, tau, dHd,
                                          sum_abs_dCid, eps_A))


def backtrack(evaluate, nu_alpha: float = 0.5, alpha0: float = 1.0,
              max_backtracks: int = 60, condition: str = CLASSICAL) -> LineSearchResult:
    """Try ``alpha0 * nu_alpha**j`` for ``j = 0, 1, ...``.

    ``evaluate(alpha)`` returns ``(lhs, rhs)``; the first ``alpha`` with
    ``lhs <= rhs`` is accepted.
    """
    if not 0 < nu_alpha < 1:
        raise ValueError("nu_alpha must lie in (0, 1)")
    alpha = alpha0
    for j in range(max_backtracks + 1):
        lhs, rhs = evaluate(alpha)
        if lhs <= rhs:
            return LineSearchResult(alpha, j, condition, float(lhs), float(rhs))
        alpha *= nu_alpha
    raise LineSearchFailure(f"no acceptable step after {max_backtracks} backtracks")
