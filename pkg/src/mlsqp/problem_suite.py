"""Built-in test problems, LIBSVM ingestion and the constrained logistic family."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, TextIO

import numpy as np
from scipy.special import expit

from .problem_core import DimensionError, FiniteSumOracle, PrimalDual, ProblemOracle


class ParseError(ValueError):
    pass


class UnknownProblem(KeyError):
    pass


# ---------------------------------------------------------------------------
# Hand-coded two-dimensional examples
# ---------------------------------------------------------------------------

def maratos_counterexample() -> ProblemOracle:
    """``min z1^2 + z2^2  s.t. (z1 + 1)^2 + z2^2 - 4 = 0``."""
    I2 = np.eye(2)
    return ProblemOracle(
        2, 1,
        f=lambda z: z[0] ** 2 + z[1] ** 2,
        grad=lambda z: 2.0 * z,
        hess=lambda z: 2.0 * I2,
        cons=lambda z: np.array([(z[0] + 1) ** 2 + z[1] ** 2 - 4.0]),
        jac=lambda z: np.array([[2.0 * (z[0] + 1), 2.0 * z[1]]]),
        cons_hess=lambda z: 2.0 * I2[None],
        name="maratos",
        x0=[math.sqrt(2) - 1, math.sqrt(2)],
        x_star=[1.0, 0.0], y_star=[-0.5], f_star=1.0,
    )


def constrained_rosenbrock() -> ProblemOracle:
    """Rosenbrock objective on the circle ``(z1 + 2)^2 + (z2 - 1)^2 = 9``."""

    def f(z):
        return (1 - z[0]) ** 2 + 100 * (z[1] - z[0] ** 2) ** 2

    def grad(z):
        t = z[1] - z[0] ** 2
        return np.array([-2 * (1 - z[0]) - 400 * z[0] * t, 200 * t])

    def hess(z):
        return np.array([[2 - 400 * z[1] + 1200 * z[0] ** 2, -400 * z[0]],
                         [-400 * z[0], 200.0]])

    return ProblemOracle(
        2, 1, f, grad, hess,
        cons=lambda z: np.array([(z[0] + 2) ** 2 + (z[1] - 1) ** 2 - 9.0]),
        jac=lambda z: np.array([[2 * (z[0] + 2), 2 * (z[1] - 1)]]),
        cons_hess=lambda z: 2.0 * np.eye(2)[None],
        name="rosenbrock-circle",
        x0=[-1.1, 1.0],
        x_star=[1.0, 1.0], y_star=[0.0], f_star=0.0,
    )


# ---------------------------------------------------------------------------
# Hock-Schittkowski style bank (derivatives generated symbolically)
# ---------------------------------------------------------------------------

# name -> (objective, constraints, x0, approximate solution)
# Expressions use x1..xn; constraints are written as c(x) = 0.
_HS = {
    "hs006": ("(1 - x1)**2",
              ["10*(x2 - x1**2)"],
              [-1.2, 1.0], [1.0, 1.0]),
    "hs007": ("log(1 + x1**2) - x2",
              ["(1 + x1**2)**2 + x2**2 - 4"],
              [2.0, 2.0], [0.0, math.sqrt(3)]),
    "hs027": ("0.01*(x1 - 1)**2 + (x2 - x1**2)**2",
              ["x1 + x3**2 + 1"],
              [2.0, 2.0, 2.0], [-1.0, 1.0, 0.0]),
    "hs039": ("-x1",
              ["x2 - x1**3 - x3**2", "x1**2 - x2 - x4**2"],
              [2.0, 2.0, 2.0, 2.0], [1.0, 1.0, 0.0, 0.0]),
    "hs061": ("4*x1**2 + 2*x2**2 + 2*x3**2 - 33*x1 + 16*x2 - 24*x3",
              ["3*x1 - 2*x2**2 - 7", "4*x1 - x3**2 - 11"],
              [0.0, 0.0, 0.0], [5.326770, -2.118998, 3.210464]),
    "hs077": ("(x1 - 1)**2 + (x1 - x2)**2 + (x3 - 1)**2 + (x4 - 1)**4 + (x5 - 1)**6",
              ["x1**2*x4 + sin(x4 - x5) - 2*sqrt(2)",
               "x2 + x3**4*x4**2 - 8 - sqrt(2)"],
              [2.0] * 5, [1.166172, 1.182111, 1.380257, 1.506036, 0.6109203]),
    "hs078": ("x1*x2*x3*x4*x5",
              ["x1**2 + x2**2 + x3**2 + x4**2 + x5**2 - 10",
               "x2*x3 - 5*x4*x5", "x1**3 + x2**3 + 1"],
              [-2.0, 1.5, 2.0, -1.0, -1.0],
              [-1.717143, 1.595709, 1.827247, -0.7636413, -0.7636450]),
    "hs079": ("(x1 - 1)**2 + (x1 - x2)**2 + (x2 - x3)**2 + (x3 - x4)**4 + (x4 - x5)**4",
              ["x1 + x2**2 + x3**3 - 2 - 3*sqrt(2)",
               "x2 - x3**2 + x4 + 2 - 2*sqrt(2)", "x1*x5 - 2"],
              [2.0] * 5, [1.191127, 1.362603, 1.472818, 1.635017, 1.679081]),
    "hs100lnp": ("(x1 - 10)**2 + 5*(x2 - 12)**2 + x3**4 + 3*(x4 - 11)**2 + 10*x5**6"
                 " + 7*x6**2 + x7**4 - 4*x6*x7 - 10*x6 - 8*x7",
                 ["2*x1**2 + 3*x2**4 + x3 + 4*x4**2 + 5*x5 - 127",
                  "-4*x1**2 - x2**2 + 3*x1*x2 - 2*x3**2 - 5*x6 + 11*x7"],
                 [1.0, 2.0, 0.0, 4.0, 0.0, 1.0, 1.0],
                 [2.330499, 1.951372, -0.4775414, 4.365726, -0.6244870, 1.038131, 1.594227]),
}


def symbolic_problem(name: str, objective: str, constraints: list[str], x0,
                     x_guess=None) -> ProblemOracle:
    """Build an oracle whose derivatives are differentiated symbolically.

    When ``x_guess`` is given it is refined by Newton's method on the KKT
    conditions and stored as the reference solution.
    """
    import sympy as sp

    n = len(x0)
    xs = sp.symbols(f"x1:{n + 1}")
    ns = {f"x{i + 1}": xs[i] for i in range(n)}
    fe = sp.sympify(objective, locals=ns)
    ce = [sp.sympify(c, locals=ns) for c in constraints]
    m = len(ce)

    def lam(expr):
        fn = sp.lambdify([xs], expr, "numpy")
        return lambda x: np.array(fn(x), dtype=float)

    grad_e = [sp.diff(fe, v) for v in xs]
    hess_e = sp.hessian(fe, xs)
    jac_e = sp.Matrix([[sp.diff(c, v) for v in xs] for c in ce])
    chess_e = [sp.hessian(c, xs).tolist() for c in ce]

    oracle = ProblemOracle(
        n, m,
        f=lam(fe), grad=lam(grad_e), hess=lam(hess_e.tolist()),
        cons=lam(ce), jac=lam(jac_e.tolist()), cons_hess=lam(chess_e),
        name=name, x0=x0,
    )
    if x_guess is not None:
        ref = polish_kkt_point(oracle, np.asarray(x_guess, float))
        oracle.x_star, oracle.y_star = ref.x, ref.y
        oracle.f_star = float(oracle._f(ref.x))
    return oracle


def least_squares_multipliers(g, J) -> np.ndarray:
    """``argmin_y ||g + J^T y||_2``."""
    if J.shape[0] == 0:
        return np.zeros(0)
    y, *_ = np.linalg.lstsq(J.T, -g, rcond=None)
    return y


def polish_kkt_point(oracle: ProblemOracle, x, y=None, iters: int = 50,
                     tol: float = 1e-15) -> PrimalDual:
    """Newton's method on ``[g + J^T y; c] = 0`` (uncounted evaluations)."""
    x = np.asarray(x, float).copy()
    if y is None:
        y = least_squares_multipliers(oracle._grad(x), np.asarray(oracle._jac(x), float))
    n, m = oracle.n, oracle.m
    for _ in range(iters):
        g = np.asarray(oracle._grad(x), float)
        J = np.asarray(oracle._jac(x), float).reshape(m, n)
        c = np.asarray(oracle._cons(x), float).reshape(m)
        W = np.asarray(oracle._hess(x), float) + np.tensordot(
            y, np.asarray(oracle._cons_hess(x), float).reshape(m, n, n), axes=1)
        F = np.concatenate([g + J.T @ y, c])
        if np.max(np.abs(F)) <= tol:
            break
        K = np.block([[W, J.T], [J, np.zeros((m, m))]])
        step = np.linalg.solve(K, -F)
        x = x + step[:n]
        y = y + step[n:]
    return PrimalDual(x, y)


@lru_cache(maxsize=None)
def _hs_problem(name: str) -> ProblemOracle:
    obj, cons, x0, guess = _HS[name]
    return symbolic_problem(name, obj, cons, x0, guess)


def hs_problem(name: str) -> ProblemOracle:
    return _hs_problem(name).fresh()


def analytic_bank() -> list[ProblemOracle]:
    """Small problems with reference KKT points, in a fixed order."""
    bank = [maratos_counterexample(), constrained_rosenbrock()]
    bank += [hs_problem(name) for name in _HS]
    return bank


BANK_KEYS = ("maratos", "rosenbrock-circle") + tuple(_HS)


# ---------------------------------------------------------------------------
# LIBSVM text format
# ---------------------------------------------------------------------------

def parse_libsvm(stream: TextIO | Iterable[str], n_features: int | None = None):
    """Parse ``<label> <index>:<value> ...`` lines into a dense matrix.

    Labels are mapped to {-1, +1}: if the raw labels are exactly two distinct
    values, the smaller one becomes -1.  Raw labels already in {-1, +1} are
    kept.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows, raw_labels = [], []
    max_idx = 0
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            label = float(parts[0].replace("−", "-"))
        except ValueError:
            raise ParseError(f"line {lineno}: bad label {parts[0]!r}") from None
        entries = []
        prev = 0
        for tok in parts[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"line {lineno}: expected index:value, got {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s.replace("−", "-"))
            except ValueError:
                raise ParseError(f"line {lineno}: malformed token {tok!r}") from None
            if idx < 1:
                raise ParseError(f"line {lineno}: indices are 1-based, got {idx}")
            if idx <= prev:
                raise ParseError(f"line {lineno}: indices not ascending at {idx}")
            prev = idx
            entries.append((idx, val))
        max_idx = max(max_idx, prev)
        rows.append(entries)
        raw_labels.append(label)
    if not rows:
        raise ParseError("empty input")
    n = max_idx if n_features is None else n_features
    if max_idx > n:
        raise ParseError(f"feature index {max_idx} exceeds n_features={n}")
    X = np.zeros((len(rows), n))
    for i, entries in enumerate(rows):
        for idx, val in entries:
            X[i, idx - 1] = val
    return X, _remap_labels(np.array(raw_labels))


def _remap_labels(raw: np.ndarray) -> np.ndarray:
    values = np.unique(raw)
    if set(values.tolist()) <= {-1.0, 1.0}:
        return raw.astype(float)
    if values.size != 2:
        raise ParseError(f"expected binary labels, found {values.size} distinct values")
    return np.where(raw == values[0], -1.0, 1.0)


def format_libsvm(X, labels) -> str:
    out = []
    for row, lab in zip(np.asarray(X), labels):
        feats = " ".join(f"{j + 1}:{v!r}" for j, v in enumerate(row.tolist()) if v != 0)
        out.append(f"{int(lab):+d} {feats}".rstrip())
    return "\n".join(out) + "\n"


def load_libsvm(path, n_features=None):
    with open(path, encoding="ascii") as fh:
        return parse_libsvm(fh, n_features)


# ---------------------------------------------------------------------------
# Constrained logistic regression
# ---------------------------------------------------------------------------

@dataclass
class LogisticProblemSpec:
    X: np.ndarray
    labels: np.ndarray
    A1: np.ndarray
    a1: np.ndarray
    A2: np.ndarray
    a2: float
    seed: int | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, float)
        self.labels = np.asarray(self.labels, float).reshape(-1)
        self.A1 = np.atleast_2d(np.asarray(self.A1, float))
        self.a1 = np.asarray(self.a1, float).reshape(-1)
        self.A2 = np.asarray(self.A2, float)
        N, n = self.X.shape
        if self.labels.shape[0] != N:
            raise DimensionError("labels length does not match X rows")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be in {-1, +1}")
        if self.A1.shape[1] != n or self.a1.shape[0] != self.A1.shape[0]:
            raise DimensionError("A1/a1 shapes inconsistent with X")
        if self.A2.shape != (n, n):
            raise DimensionError("A2 must be n x n")
        if np.linalg.matrix_rank(self.A1) < self.A1.shape[0]:
            raise ValueError("A1 must have full row rank")


def make_logistic_spec(X, labels, m: int = 5, a2: float = 5.0, seed: int = 0,
                       a1_scale: float = 1.0) -> LogisticProblemSpec:
    """Random constraint data: Gaussian ``A1, a1``; ``A2 = Q^T D Q``."""
    X = np.asarray(X, float)
    n = X.shape[1]
    rng = np.random.default_rng(seed)
    A1 = a1_scale * rng.standard_normal((m, n))
    a1 = a1_scale * rng.standard_normal(m)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    D = np.linspace(1.0, 10.0, n)
    A2 = Q.T @ np.diag(D) @ Q
    A2 = 0.5 * (A2 + A2.T)
    return LogisticProblemSpec(X, labels, A1, a1, A2, a2, seed)


class LogisticProblem(FiniteSumOracle):
    """``(1/N) sum log(1 + exp(-y_i X_i x))`` s.t. ``A1 x = a1``, ``x^T A2 x = a2``."""

    def __init__(self, spec: LogisticProblemSpec, name="logistic"):
        self.spec = spec
        X, A1, A2 = spec.X, spec.A1, spec.A2
        N, n = X.shape
        m = A1.shape[0] + 1
        self._X = X
        self._yl = spec.labels
        chess = np.zeros((m, n, n))
        chess[-1] = 2.0 * A2

        def cons(x):
            return np.concatenate([A1 @ x - spec.a1, [x @ A2 @ x - spec.a2]])

        def jac(x):
            return np.vstack([A1, 2.0 * (A2 @ x)])

        super().__init__(n, m, N, cons, jac, lambda x: chess, name=name)

    def _margins(self, x, idx):
        Xs = self._X[idx]
        return Xs, self._yl[idx], self._yl[idx] * (Xs @ x)

    def _component_f(self, x, idx):
        _, _, z = self._margins(x, idx)
        return np.logaddexp(0.0, -z)

    def _component_grad(self, x, idx):
        Xs, ys, z = self._margins(x, idx)
        return (-ys * expit(-z))[:, None] * Xs

    def _component_hess_mean(self, x, idx):
        Xs, _, z = self._margins(x, idx)
        s = expit(z)
        wts = s * (1.0 - s)
        return (Xs.T * wts) @ Xs / len(wts)

    def component_hess_norms(self, x, idx=None):
        idx = self._all if idx is None else idx
        Xs, _, z = self._margins(np.asarray(x, float), idx)
        s = expit(z)
        return s * (1.0 - s) * np.sum(Xs * Xs, axis=1)

    def deterministic_twin(self) -> ProblemOracle:
        """Plain oracle for the summed objective (no finite-sum structure)."""
        return ProblemOracle(self.n, self.m, self._full_f, self._full_grad,
                             self._full_hess, self._cons, self._jac, self._cons_hess,
                             name=self.name + "-deterministic")


def make_logistic_problem(spec: LogisticProblemSpec, name="logistic") -> LogisticProblem:
    return LogisticProblem(spec, name=name)


def synthetic_classification(N: int, n: int, seed: int = 0, noise: float = 1.0):
    """Linearly generated binary data with label noise."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, n))
    w = rng.standard_normal(n)
    logits = X @ w / math.sqrt(n) * 2.0
    labels = np.where(logits + noise * rng.logistic(size=N) > 0, 1.0, -1.0)
    return X, labels


# ---------------------------------------------------------------------------
# Start points
# ---------------------------------------------------------------------------

@dataclass
class StartSpec:
    x0: np.ndarray
    y0: np.ndarray | None = None
    y0_rule: str = "least_squares"

    def resolve(self, oracle: ProblemOracle) -> PrimalDual:
        """Materialize ``(x0, y0)``; the least-squares rule is uncounted."""
        x0 = np.asarray(self.x0, float)
        if self.y0_rule == "explicit":
            return PrimalDual(x0, self.y0)
        g = np.asarray(oracle._grad(x0), float)
        J = np.asarray(oracle._jac(x0), float).reshape(oracle.m, oracle.n)
        return PrimalDual(x0, least_squares_multipliers(g, J))


def default_start(oracle: ProblemOracle, seed: int | None = None) -> StartSpec:
    """Problem's own start point, or a Gaussian vector of norm 0.1 when the
    problem has none (or a seed is given for a finite-sum problem)."""
    if oracle.x0 is not None and (seed is None or not isinstance(oracle, FiniteSumOracle)):
        x0 = oracle.x0.copy()
    else:
        rng = np.random.default_rng(0 if seed is None else seed)
        v = rng.standard_normal(oracle.n)
        x0 = 0.1 * v / np.linalg.norm(v)
    if oracle.y0 is not None:
        return StartSpec(x0, oracle.y0.copy(), "explicit")
    spec = StartSpec(x0)
    spec.y0 = spec.resolve(oracle).y
    return spec


# ---------------------------------------------------------------------------
# Key resolution
# ---------------------------------------------------------------------------

def resolve_problem(key: str, seed: int = 0) -> ProblemOracle:
    """Map a string key to a fresh oracle.

    Keys: ``maratos``, ``rosenbrock-circle``, any bank name (``hs006`` ...),
    ``logistic:<path>`` for a LIBSVM file, and
    ``logistic-synth:<N>:<n>`` for generated data.
    """
    if key == "maratos":
        return maratos_counterexample()
    if key in ("rosenbrock-circle", "rosenbrock"):
        return constrained_rosenbrock()
    if key in _HS:
        return hs_problem(key)
    if key.startswith("logistic:"):
        X, labels = load_libsvm(key.split(":", 1)[1])
        m = min(5, X.shape[1] - 1)   # leave room for the quadratic constraint
        return make_logistic_problem(make_logistic_spec(X, labels, m=m, seed=seed), name=key)
    if key.startswith("logistic-synth"):
        parts = key.split(":")
        N = int(parts[1]) if len(parts) > 1 else 500
        n = int(parts[2]) if len(parts) > 2 else 20
        X, labels = synthetic_classification(N, n, seed=seed)
        m = min(5, n - 1)
        return make_logistic_problem(make_logistic_spec(X, labels, m=m, seed=seed), name=key)
    raise UnknownProblem(key)
