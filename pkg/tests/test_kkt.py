import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlsqp.kkt import (IllPosedSubproblem, KktSolution, KktSystem, LicqFailure, assemble,
                       build_system, decompose_direction, null_space, reduced_hessian_min_eig,
                       regularize, solve_dense)
from mlsqp.problem_core import PrimalDual
from mlsqp.problem_suite import constrained_rosenbrock, maratos_counterexample

from conftest import quadratic_1d, random_kkt_system


def test_assemble_quadratic_example():
    sys = assemble(quadratic_1d(), PrimalDual([0.0], [0.0]))
    np.testing.assert_array_equal(sys.W, [[1.0]])
    np.testing.assert_array_equal(sys.J, [[1.0]])
    np.testing.assert_array_equal(sys.rhs, [0.0, 1.0])
    sol = solve_dense(sys)
    np.testing.assert_allclose(sol.d, [1.0], atol=1e-14)
    np.testing.assert_allclose(sol.delta, [-1.0], atol=1e-14)
    assert sol.solver_kind == "dense" and sol.iterations == 0


def test_assemble_at_maratos_optimum_has_zero_rhs():
    sys = assemble(maratos_counterexample(), PrimalDual([1.0, 0.0], [-0.5]))
    np.testing.assert_array_equal(sys.rhs, np.zeros(3))
    sol = solve_dense(regularize(sys))
    assert np.all(sol.d == 0) and np.all(sol.delta == 0)


def test_assemble_is_symmetric_block():
    sys = assemble(constrained_rosenbrock(), PrimalDual([-1.1, 1.0], [0.3]))
    K = sys.matrix()
    assert np.array_equal(K, K.T)
    assert sys.regularization == 0.0


def test_licq_failure():
    with pytest.raises(LicqFailure):
        build_system(np.eye(3), np.array([[1.0, 2, 3], [2.0, 4, 6]]), np.ones(3), np.zeros(2),
                     np.zeros(2))


def test_regularize_noop_when_positive_definite():
    sys = KktSystem(np.eye(2), np.array([[1.0, 0.0]]), np.zeros(2), np.zeros(1))
    assert regularize(sys) is sys


def test_regularize_doubling_value():
    sys = KktSystem(np.diag([1.0, -1.0]), np.array([[1.0, 0.0]]), np.zeros(2), np.zeros(1))
    reg = regularize(sys)
    assert reg.regularization == 2 ** 20 * 1e-6
    assert reduced_hessian_min_eig(reg.W, reg.J) >= 1e-8
    # previous doubling would not have been enough
    assert -1 + 2 ** 19 * 1e-6 < 1e-8


def test_regularize_square_jacobian_never_shifts():
    rng = np.random.default_rng(0)
    sys = KktSystem(-10 * np.eye(3), rng.standard_normal((3, 3)), np.zeros(3), np.zeros(3))
    assert regularize(sys).regularization == 0.0


def test_regularize_cap():
    sys = KktSystem(np.diag([1.0, -1e9]), np.array([[1.0, 0.0]]), np.zeros(2), np.zeros(1))
    with pytest.raises(IllPosedSubproblem):
        regularize(sys)


def test_regularize_idempotent(rng):
    for _ in range(20):
        s = random_kkt_system(rng, 6, 2)
        assert regularize(s).regularization == s.regularization


def test_null_space_orthonormal(rng):
    J = rng.standard_normal((3, 7))
    Z = null_space(J)
    assert Z.shape == (7, 4)
    np.testing.assert_allclose(J @ Z, 0, atol=1e-12)
    np.testing.assert_allclose(Z.T @ Z, np.eye(4), atol=1e-12)


def test_solve_dense_random_battery(rng):
    for _ in range(100):
        n = int(rng.integers(2, 21))
        m = int(rng.integers(1, min(8, n) + 1))
        sys = random_kkt_system(rng, n, m)
        sol = solve_dense(sys)
        assert sol.residual_inf <= 1e-10 * max(1.0, np.max(np.abs(sys.rhs)))
        c = -sys.rhs_bottom
        np.testing.assert_allclose(sys.J @ sol.d + c, 0, atol=1e-8)


def test_solve_dense_matches_generic_solver(rng):
    sys = random_kkt_system(rng, 5, 2, indefinite=False)
    sol = solve_dense(sys)
    ref = np.linalg.solve(sys.matrix(), sys.rhs)
    np.testing.assert_allclose(np.concatenate([sol.d, sol.delta]), ref, atol=1e-8)
    assert sol.residual_inf <= 1e-10


def test_solve_dense_zero_rhs(rng):
    sys = random_kkt_system(rng, 4, 2)
    sys.rhs_top[:] = 0
    sys.rhs_bottom[:] = 0
    sol = solve_dense(sys)
    assert np.all(sol.d == 0) and np.all(sol.delta == 0)


def test_decompose_direction_examples():
    sys = KktSystem(np.eye(2), np.array([[1.0, 0.0]]), np.zeros(2), np.array([1.0]))  # c = -1
    sol = KktSolution(np.array([1.0, 0.5]), np.zeros(1), np.zeros(2), np.zeros(1))
    u, v = decompose_direction(sys, sol)
    np.testing.assert_allclose(v, [1.0, 0.0])
    np.testing.assert_allclose(u, [0.0, 0.5])
    feas = KktSystem(np.eye(2), np.array([[1.0, 1.0]]), np.zeros(2), np.zeros(1))
    u, v = decompose_direction(feas, sol)
    assert np.all(v == 0) and np.array_equal(u, sol.d)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 10), st.integers(1, 4))
def test_decompose_orthogonality(seed, n, m):
    m = min(m, n)
    rng = np.random.default_rng(seed)
    sys = random_kkt_system(rng, n, m)
    sol = solve_dense(sys)
    u, v = decompose_direction(sys, sol)
    scale = max(1.0, np.linalg.norm(sol.d)) ** 2
    assert abs(u @ v) <= 1e-10 * scale
    np.testing.assert_allclose(sys.J @ u, 0, atol=1e-8 * max(1.0, np.linalg.norm(sol.d)))
