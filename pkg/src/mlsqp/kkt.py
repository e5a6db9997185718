"""Assembly, regularization and dense solution of the SQP Newton-KKT system

    [ W  J^T ] [ d     ]     [ g + J^T y ]
    [ J  0   ] [ delta ] = - [ c         ]
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .problem_core import PrimalDual, ProblemOracle, evaluate_lagrangian_hessian


class LicqFailure(RuntimeError):
    """Constraint Jacobian is numerically rank deficient."""


class IllPosedSubproblem(RuntimeError):
    """No admissible regularization below the cap."""


class SingularSystem(RuntimeError):
    pass


@dataclass
class KktSystem:
    W: np.ndarray
    J: np.ndarray
    rhs_top: np.ndarray
    rhs_bottom: np.ndarray
    regularization: float = 0.0

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.J.shape[0]

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_top, self.rhs_bottom])

    def matrix(self) -> np.ndarray:
        m = self.m
        return np.block([[self.W, self.J.T], [self.J, np.zeros((m, m))]])


@dataclass
class KktSolution:
    d: np.ndarray
    delta: np.ndarray
    residual_top: np.ndarray
    residual_bottom: np.ndarray
    solver_kind: str = "dense"
    iterations: int = 0

    @property
    def residual_inf(self) -> float:
        r = np.concatenate([self.residual_top, self.residual_bottom])
        return float(np.max(np.abs(r))) if r.size else 0.0


def check_licq(J: np.ndarray, rtol: float = 1e-12) -> None:
    if J.shape[0] == 0:
        return
    s = np.linalg.svd(J, compute_uv=False)
    if s[-1] <= rtol * s[0]:
        raise LicqFailure(f"Jacobian singular values {s[0]:.3e} .. {s[-1]:.3e}")


def build_system(W, J, g, y, c) -> KktSystem:
    """System from already-evaluated quantities; checks LICQ."""
    W = np.asarray(W, float)
    J = np.asarray(J, float)
    check_licq(J)
    return KktSystem(0.5 * (W + W.T), J, -(g + J.T @ y), -np.asarray(c, float))


def assemble(oracle: ProblemOracle, w: PrimalDual, W_bar=None, g_bar=None) -> KktSystem:
    """Evaluate the oracle at ``w`` and build the (unregularized) system.

    ``W_bar``/``g_bar`` replace the exact Lagrangian Hessian and objective
    gradient in the subsampled setting.
    """
    W = evaluate_lagrangian_hessian(oracle, w) if W_bar is None else W_bar
    g = oracle.grad(w.x) if g_bar is None else g_bar
    return build_system(W, oracle.jac(w.x), g, w.y, oracle.cons(w.x))


def null_space(J: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ``Null(J)`` from a full QR factorization of ``J^T``."""
    m, n = J.shape
    if m == 0:
        return np.eye(n)
    Q, _ = scipy.linalg.qr(J.T, mode="full")
    return Q[:, m:]


def reduced_hessian_min_eig(W, J) -> float:
    Z = null_space(J)
    if Z.shape[1] == 0:
        return np.inf
    R = Z.T @ W @ Z
    return float(np.linalg.eigvalsh(0.5 * (R + R.T))[0])


def regularize(system: KktSystem, zeta_min: float = 1e-8, lambda0: float = 1e-6,
               cap: float = 1e8) -> KktSystem:
    """Shift ``W`` by the smallest ``lam`` in ``{0, lambda0, 2 lambda0, ...}``
    making the reduced Hessian's smallest eigenvalue at least ``zeta_min``.

    Only ``W`` is shifted, so the second block row (``J d = -c``) is untouched.
    """
    if zeta_min <= 0:
        raise ValueError("zeta_min must be positive")
    mu = reduced_hessian_min_eig(system.W, system.J)
    if mu >= zeta_min:
        return system
    lam = lambda0
    while mu + lam < zeta_min:
        lam *= 2.0
        if lam > cap:
            raise IllPosedSubproblem(
                f"reduced Hessian min eigenvalue {mu:.3e} needs shift above {cap:g}")
    W = system.W + lam * np.eye(system.n)
    return replace(system, W=W, regularization=system.regularization + lam)


def residuals(system: KktSystem, d, delta):
    rho = system.W @ d + system.J.T @ delta - system.rhs_top
    r = system.J @ d - system.rhs_bottom
    return rho, r


def solve_dense(system: KktSystem) -> KktSolution:
    """Symmetric-indefinite (Bunch-Kaufman LDL^T) solve of the block system."""
    K = system.matrix()
    try:
        sol = scipy.linalg.solve(K, system.rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("non-finite solution")
    n = system.n
    d, delta = sol[:n], sol[n:]
    rho, r = residuals(system, d, delta)
    return KktSolution(d, delta, rho, r, "dense", 0)


def decompose_direction(system: KktSystem, sol: KktSolution):
    """Split ``d = u + v`` with ``u`` in ``Null(J)`` and ``v`` in ``Range(J^T)``.

    ``v = -J^T (J J^T)^{-1} c``; ``c`` is read off the system's right-hand side.
    """
    J = system.J
    c = -system.rhs_bottom
    if J.shape[0] == 0:
        return sol.d.copy(), np.zeros_like(sol.d)
    v = -J.T @ np.linalg.solve(J @ J.T, c)
    u = sol.d - v
    return u, v
