import numpy as np
import pytest

from mlsqp.kkt import KktSystem, regularize
from mlsqp.problem_core import ProblemOracle


def random_kkt_system(rng, n, m, indefinite=True):
    """Seeded symmetric system with full-row-rank J, regularized so that the
    reduced Hessian is positive definite."""
    A = rng.standard_normal((n, n))
    W = 0.5 * (A + A.T) if indefinite else A @ A.T + np.eye(n)
    J = rng.standard_normal((m, n))
    sys = KktSystem(W, J, rng.standard_normal(n), rng.standard_normal(m))
    return regularize(sys)


def linear_problem(a, B, b):
    """f(x) = a'x, c(x) = Bx - b."""
    a, B, b = (np.asarray(v, float) for v in (a, B, b))
    m, n = B.shape
    return ProblemOracle(
        n, m,
        f=lambda x: a @ x, grad=lambda x: a, hess=lambda x: np.zeros((n, n)),
        cons=lambda x: B @ x - b, jac=lambda x: B,
        cons_hess=lambda x: np.zeros((m, n, n)), name="linear")


def quadratic_1d():
    """f(x) = x^2/2, c(x) = x - 1."""
    return ProblemOracle(
        1, 1,
        f=lambda x: 0.5 * x[0] ** 2, grad=lambda x: x.copy(), hess=lambda x: np.eye(1),
        cons=lambda x: x - 1.0, jac=lambda x: np.eye(1),
        cons_hess=lambda x: np.zeros((1, 1, 1)), name="quad1d", x0=[0.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail=""):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
