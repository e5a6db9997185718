"""Unpreconditioned MINRES for symmetric (possibly indefinite) operators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kkt import KktSolution, KktSystem


class NumericalBreakdown(RuntimeError):
    pass


class OperatorAsymmetry(ValueError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass
class MinresConfig:
    kappa: float = 1e-12
    max_iterations: int | None = None
    absolute_floor: float = 1e-12
    validate: bool = False

    def __post_init__(self):
        if isinstance(self.kappa, str):
            presets = {"exact": 1e-12, "inexact": 1e-1}
            self.kappa = presets[self.kappa]
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class MinresReport:
    iterations_used: int
    residual_history: list = field(default_factory=list)  # inf-norm per iteration
    residual_norms: list = field(default_factory=list)    # 2-norm per iteration
    converged: bool = False
    final_residual: float = np.nan


def _check_symmetry(apply, size, rng=None):
    rng = np.random.default_rng(12345) if rng is None else rng
    for _ in range(3):
        u = rng.standard_normal(size)
        v = rng.standard_normal(size)
        lhs = u @ apply(v)
        rhs = v @ apply(u)
        if abs(lhs - rhs) > 1e-8 * np.linalg.norm(u) * np.linalg.norm(v):
            raise OperatorAsymmetry(f"u'Mv - v'Mu = {lhs - rhs:.3e}")


def minres_solve(apply, rhs, config: MinresConfig | None = None):
    """Solve ``M x = rhs`` from ``x0 = 0``.

    Stops at the first iteration with
    ``||rhs - M x||_inf <= max(kappa ||rhs||_inf, absolute_floor)``.  The
    residual vector is carried by recurrence (using the ``M v`` products that
    the Lanczos process already forms) and recomputed explicitly at exit.
    """
    config = MinresConfig() if config is None else config
    b = np.asarray(rhs, dtype=float).reshape(-1)
    size = b.shape[0]
    if not np.all(np.isfinite(b)):
        raise ValueError("rhs must be finite")
    if config.validate:
        _check_symmetry(apply, size)
    max_it = size if config.max_iterations is None else config.max_iterations
    tol = max(config.kappa * (np.max(np.abs(b)) if size else 0.0), config.absolute_floor)

    x = np.zeros(size)
    report = MinresReport(0)
    if size == 0 or np.max(np.abs(b)) <= tol:
        report.converged = True
        report.final_residual = float(np.max(np.abs(b))) if size else 0.0
        return x, report

    res = b.copy()
    beta = np.linalg.norm(b)
    r1 = np.zeros(size)
    r2 = b.copy()
    oldb = 0.0
    dbar = 0.0
    epsln = 0.0
    phibar = beta
    cs, sn = -1.0, 0.0
    w = np.zeros(size)
    w2 = np.zeros(size)
    Aw = np.zeros(size)
    Aw2 = np.zeros(size)
    anorm = 0.0
    tiny = 8 * np.finfo(float).eps

    for it in range(1, max_it + 1):
        if beta == 0.0:
            raise NumericalBreakdown("Lanczos beta vanished with nonzero residual")
        v = r2 / beta
        Av = np.asarray(apply(v), dtype=float)
        y = Av.copy()
        if it >= 2:
            y -= (beta / oldb) * r1
        alfa = v @ y
        y -= (alfa / beta) * r2
        r1, r2 = r2, y
        prev = oldb
        oldb = beta
        beta = np.linalg.norm(r2)
        anorm = max(anorm, float(np.sqrt(prev ** 2 + alfa ** 2 + beta ** 2)))
        if beta <= tiny * anorm:
            beta = 0.0

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = np.hypot(gbar, beta)
        if gamma <= tiny * anorm:
            raise NumericalBreakdown("singular tridiagonal system")
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        Aw1, Aw2 = Aw2, Aw
        w = (v - oldeps * w1 - delta * w2) / gamma
        Aw = (Av - oldeps * Aw1 - delta * Aw2) / gamma
        x += phi * w
        res -= phi * Aw
        if not np.all(np.isfinite(x)):
            raise NumericalBreakdown("non-finite iterate")

        report.iterations_used = it
        report.residual_norms.append(abs(phibar))
        report.residual_history.append(float(np.max(np.abs(res))))
        if report.residual_history[-1] <= tol:
            report.converged = True
            break
        if beta == 0.0:
            # Krylov space is invariant: x is exact up to round-off.
            break

    true_res = b - np.asarray(apply(x), dtype=float)
    report.final_residual = float(np.max(np.abs(true_res)))
    report.converged = report.final_residual <= tol
    if beta == 0.0 and not report.converged and report.iterations_used < max_it:
        raise NumericalBreakdown(
            f"invariant Krylov subspace but residual {report.final_residual:.3e}")
    return x, report


def kkt_operator(system: KktSystem):
    """Block product ``[W J^T; J 0] v`` without forming the block matrix."""
    n = system.n
    W, J = system.W, system.J

    def apply(v):
        v = np.asarray(v, dtype=float)
        top, bot = v[:n], v[n:]
        return np.concatenate([W @ top + J.T @ bot, J @ top])

    return apply


def solve_minres(system: KktSystem, config: MinresConfig | None = None):
    """MINRES counterpart of :func:`mlsqp.kkt.solve_dense`."""
    config = MinresConfig() if config is None else config
    if config.max_iterations is None:
        config = MinresConfig(config.kappa, system.n + system.m,
                              config.absolute_floor, config.validate)
    apply = kkt_operator(system)
    sol, report = minres_solve(apply, system.rhs, config)
    n = system.n
    d, delta = sol[:n], sol[n:]
    full = apply(sol) - system.rhs
    return KktSolution(d, delta, full[:n], full[n:], "minres", report.iterations_used), report


def measure_contraction(report: MinresReport) -> float:
    """Geometric mean of successive 2-norm residual ratios."""
    h = report.residual_norms
    if len(h) < 2:
        raise InsufficientData("need at least two residual entries")
    if h[0] == 0.0:
        return 0.0
    return float((h[-1] / h[0]) ** (1.0 / (len(h) - 1)))
