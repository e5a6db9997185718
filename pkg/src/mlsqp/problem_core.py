"""Evaluation interface for equality-constrained problems.

A problem is ``min f(x) s.t. c(x) = 0`` with ``f: R^n -> R`` and
``c: R^n -> R^m``.  Every evaluator call is charged to an
:class:`OracleCounters` instance owned by the oracle object; use
:meth:`ProblemOracle.fresh` to get a copy with its own counters before a
solver run.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields

import numpy as np


class DimensionError(ValueError):
    """Raised when vector or matrix shapes do not match the problem."""


@dataclass
class OracleCounters:
    """Evaluation counts, in full-evaluation equivalents.

    For finite-sum objectives a batch of size ``|S|`` adds ``|S|/N``.
    """

    f: float = 0.0
    g: float = 0.0
    H: float = 0.0
    c: float = 0.0
    J: float = 0.0
    cH: float = 0.0

    def reset(self) -> None:
        for fld in fields(self):
            setattr(self, fld.name, 0.0)

    def snapshot(self) -> dict:
        return {fld.name: float(getattr(self, fld.name)) for fld in fields(self)}

    def __sub__(self, other: "OracleCounters") -> dict:
        a, b = self.snapshot(), other.snapshot()
        return {k: a[k] - b[k] for k in a}


@dataclass
class PrimalDual:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)

    def stack(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    def copy(self) -> "PrimalDual":
        return PrimalDual(self.x.copy(), self.y.copy())


def _as_vec(v, size, name):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != size:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {size}")
    return v


class ProblemOracle:
    """Deterministic problem built from plain callables.

    ``cons_hess(x)`` must return an array of shape ``(m, n, n)``; the
    constraint Hessians stay separate because the modified line search needs
    ``sum_i |d^T grad^2 c_i d|``.
    """

    def __init__(self, n, m, f, grad, hess, cons, jac, cons_hess, *,
                 name="problem", x0=None, y0=None, x_star=None, y_star=None,
                 f_star=None):
        if m > n:
            raise DimensionError(f"m={m} exceeds n={n}")
        self.n = int(n)
        self.m = int(m)
        self.name = name
        self._f = f
        self._grad = grad
        self._hess = hess
        self._cons = cons
        self._jac = jac
        self._cons_hess = cons_hess
        self.x0 = None if x0 is None else np.asarray(x0, dtype=float)
        self.y0 = None if y0 is None else np.asarray(y0, dtype=float)
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=float)
        self.y_star = None if y_star is None else np.asarray(y_star, dtype=float)
        self.f_star = f_star
        self.counters = OracleCounters()

    def fresh(self) -> "ProblemOracle":
        """Shallow copy that owns a new, zeroed counter instance."""
        other = copy.copy(self)
        other.counters = OracleCounters()
        return other

    # -- evaluators -----------------------------------------------------
    def f(self, x) -> float:
        x = _as_vec(x, self.n, "x")
        self.counters.f += 1
        return float(self._f(x))

    def grad(self, x) -> np.ndarray:
        x = _as_vec(x, self.n, "x")
        self.counters.g += 1
        return np.asarray(self._grad(x), dtype=float).reshape(self.n)

    def hess(self, x) -> np.ndarray:
        x = _as_vec(x, self.n, "x")
        self.counters.H += 1
        H = np.asarray(self._hess(x), dtype=float).reshape(self.n, self.n)
        return 0.5 * (H + H.T)

    def cons(self, x) -> np.ndarray:
        x = _as_vec(x, self.n, "x")
        self.counters.c += 1
        return np.asarray(self._cons(x), dtype=float).reshape(self.m)

    def jac(self, x) -> np.ndarray:
        x = _as_vec(x, self.n, "x")
        self.counters.J += 1
        return np.asarray(self._jac(x), dtype=float).reshape(self.m, self.n)

    def cons_hess(self, x) -> np.ndarray:
        x = _as_vec(x, self.n, "x")
        self.counters.cH += 1
        C = np.asarray(self._cons_hess(x), dtype=float).reshape(self.m, self.n, self.n)
        return 0.5 * (C + C.transpose(0, 2, 1))

    def hess_vec(self, x, v) -> np.ndarray:
        """Objective Hessian-vector product."""
        return self.hess(x) @ _as_vec(v, self.n, "v")

    @property
    def reference(self) -> PrimalDual | None:
        if self.x_star is None or self.y_star is None:
            return None
        return PrimalDual(self.x_star, self.y_star)

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, n={self.n}, m={self.m})"


class FiniteSumOracle(ProblemOracle):
    """Objective ``f(x) = (1/N) sum_i f_i(x)`` with shared constraints.

    Subclasses implement the batched component evaluators
    ``_component_f(x, idx) -> (|S|,)``, ``_component_grad(x, idx) -> (|S|, n)``
    and ``_component_hess_mean(x, idx) -> (n, n)``.  The full evaluators are
    the same code paths with ``idx`` equal to every component.
    """

    def __init__(self, n, m, N, cons, jac, cons_hess, **kw):
        super().__init__(n, m, self._full_f, self._full_grad, self._full_hess,
                         cons, jac, cons_hess, **kw)
        self.N = int(N)
        self._all = np.arange(self.N)

    def _full_f(self, x):
        return float(np.mean(self._component_f(x, self._all)))

    def _full_grad(self, x):
        return np.mean(self._component_grad(x, self._all), axis=0)

    def _full_hess(self, x):
        return self._component_hess_mean(x, self._all)

    def _check_idx(self, idx):
        idx = np.asarray(idx, dtype=np.intp).reshape(-1)
        if idx.size == 0:
            raise ValueError("empty sample set")
        if idx.min() < 0 or idx.max() >= self.N:
            raise IndexError("sample index out of range")
        return idx

    def f_sample(self, x, idx) -> float:
        x = _as_vec(x, self.n, "x")
        idx = self._check_idx(idx)
        self.counters.f += idx.size / self.N
        return float(np.mean(self._component_f(x, idx)))

    def grad_sample(self, x, idx) -> np.ndarray:
        x = _as_vec(x, self.n, "x")
        idx = self._check_idx(idx)
        self.counters.g += idx.size / self.N
        return np.mean(self._component_grad(x, idx), axis=0)

    def hess_sample(self, x, idx) -> np.ndarray:
        x = _as_vec(x, self.n, "x")
        idx = self._check_idx(idx)
        self.counters.H += idx.size / self.N
        H = self._component_hess_mean(x, idx)
        return 0.5 * (H + H.T)

    # Uncounted probes used for bound-constant estimation and testing.
    def component_values(self, x, idx=None) -> np.ndarray:
        return self._component_f(np.asarray(x, float), self._all if idx is None else idx)

    def component_grads(self, x, idx=None) -> np.ndarray:
        return self._component_grad(np.asarray(x, float), self._all if idx is None else idx)

    def component_hess_norms(self, x, idx=None) -> np.ndarray:
        """Spectral norms of the individual component Hessians."""
        idx = self._all if idx is None else idx
        return np.array([np.linalg.norm(self._component_hess_mean(x, [i]), 2) for i in idx])


# -- Lagrangian quantities --------------------------------------------------

def _check_w(oracle, w):
    if w.x.shape[0] != oracle.n or w.y.shape[0] != oracle.m:
        raise DimensionError(
            f"iterate has (n, m)=({w.x.shape[0]}, {w.y.shape[0]}), "
            f"oracle expects ({oracle.n}, {oracle.m})")


def evaluate_lagrangian_gradient(oracle: ProblemOracle, w: PrimalDual) -> np.ndarray:
    """``g(x) + J(x)^T y``."""
    _check_w(oracle, w)
    return oracle.grad(w.x) + oracle.jac(w.x).T @ w.y


def evaluate_lagrangian_hessian(oracle: ProblemOracle, w: PrimalDual) -> np.ndarray:
    """``H(x) + sum_i y_i grad^2 c_i(x)``, symmetrized."""
    _check_w(oracle, w)
    W = oracle.hess(w.x)
    if oracle.m:
        W = W + np.tensordot(w.y, oracle.cons_hess(w.x), axes=1)
    return 0.5 * (W + W.T)


def lagrangian_hessian_product(oracle: ProblemOracle, w: PrimalDual):
    """Return ``v -> W v`` without exposing W to the caller."""
    W = evaluate_lagrangian_hessian(oracle, w)
    return lambda v: W @ v


@dataclass
class DerivativeReport:
    grad: float
    jac: float
    hess: float
    cons_hess: float
    extra: dict = field(default_factory=dict)

    def max_first_order(self) -> float:
        return max(self.grad, self.jac)

    def passes(self, first_tol=1e-5, second_tol=1e-4) -> bool:
        return self.grad <= first_tol and self.jac <= first_tol and \
            self.hess <= second_tol and self.cons_hess <= second_tol


def _rel_err(approx, exact):
    approx = np.asarray(approx, float)
    exact = np.asarray(exact, float)
    scale = max(1.0, float(np.max(np.abs(exact))) if exact.size else 1.0)
    if exact.size == 0:
        return 0.0
    return float(np.max(np.abs(approx - exact)) / scale)


def finite_difference_check(oracle: ProblemOracle, x, step: float = 1e-5) -> DerivativeReport:
    """Compare analytic derivatives with central differences at ``x``.

    Errors are max-abs differences scaled by ``max(1, max|exact|)``.  Second
    derivatives are differenced from the analytic first derivatives.  The
    oracle's counters are left untouched.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    n, m = oracle.n, oracle.m
    saved = copy.copy(oracle.counters)
    fd_g = np.empty(n)
    fd_J = np.empty((m, n))
    fd_H = np.empty((n, n))
    fd_C = np.empty((m, n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        fd_g[j] = (oracle.f(x + e) - oracle.f(x - e)) / (2 * step)
        fd_J[:, j] = (oracle.cons(x + e) - oracle.cons(x - e)) / (2 * step)
        fd_H[:, j] = (oracle.grad(x + e) - oracle.grad(x - e)) / (2 * step)
        fd_C[:, :, j] = (oracle.jac(x + e) - oracle.jac(x - e)) / (2 * step)
    report = DerivativeReport(
        grad=_rel_err(fd_g, oracle.grad(x)),
        jac=_rel_err(fd_J, oracle.jac(x)),
        hess=_rel_err(fd_H, oracle.hess(x)),
        cons_hess=_rel_err(fd_C, oracle.cons_hess(x)) if m else 0.0,
    )
    oracle.counters = saved
    return report
