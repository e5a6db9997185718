import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlsqp.problem_core import (DimensionError, OracleCounters, PrimalDual,
                                evaluate_lagrangian_gradient, evaluate_lagrangian_hessian,
                                finite_difference_check, lagrangian_hessian_product)
from mlsqp.problem_suite import (analytic_bank, constrained_rosenbrock, make_logistic_problem,
                                 make_logistic_spec, maratos_counterexample,
                                 synthetic_classification)

from conftest import linear_problem


def test_lagrangian_gradient_vanishes_at_maratos_solution():
    o = maratos_counterexample()
    r = evaluate_lagrangian_gradient(o, PrimalDual([1.0, 0.0], [-0.5]))
    assert np.array_equal(r, np.zeros(2))


def test_lagrangian_gradient_zero_multiplier_is_gradient():
    o = constrained_rosenbrock()
    x = np.array([0.3, -0.4])
    assert np.array_equal(evaluate_lagrangian_gradient(o, PrimalDual(x, [0.0])), o.grad(x))


def test_lagrangian_gradient_linear_problem_is_constant():
    a, B = np.array([1.0, -2.0, 0.5]), np.array([[1.0, 0.0, 2.0]])
    o = linear_problem(a, B, [1.0])
    y = np.array([0.7])
    for x in ([0, 0, 0], [5, -1, 2]):
        np.testing.assert_allclose(evaluate_lagrangian_gradient(o, PrimalDual(x, y)), a + B.T @ y)


def test_lagrangian_gradient_dimension_mismatch():
    o = maratos_counterexample()
    with pytest.raises(DimensionError):
        evaluate_lagrangian_gradient(o, PrimalDual([1.0, 0.0], [1.0, 2.0]))
    with pytest.raises(DimensionError):
        o.grad([1.0, 2.0, 3.0])


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_lagrangian_hessian_maratos_closed_form(x1, x2, y):
    o = maratos_counterexample()
    W = evaluate_lagrangian_hessian(o, PrimalDual([x1, x2], [y]))
    np.testing.assert_allclose(W, (2 + 2 * y) * np.eye(2), atol=1e-14)


def test_lagrangian_hessian_zero_multiplier_and_symmetry():
    for o in analytic_bank():
        x = o.x0
        W0 = evaluate_lagrangian_hessian(o, PrimalDual(x, np.zeros(o.m)))
        np.testing.assert_array_equal(W0, o.hess(x))
        W = evaluate_lagrangian_hessian(o, PrimalDual(x, np.ones(o.m)))
        assert np.array_equal(W, W.T)


def test_lagrangian_hessian_product_matches_matrix():
    o = constrained_rosenbrock()
    w = PrimalDual([0.2, 0.9], [1.3])
    v = np.array([0.5, -2.0])
    np.testing.assert_allclose(lagrangian_hessian_product(o, w)(v),
                               evaluate_lagrangian_hessian(o, w) @ v)


def test_finite_difference_maratos_and_rosenbrock():
    assert finite_difference_check(maratos_counterexample(), [0.3, 0.7]).passes(1e-5, 1e-5)
    assert finite_difference_check(constrained_rosenbrock(), [-1.1, 1.0]).passes(1e-5, 1e-5)


def test_finite_difference_linear_problem_is_exact():
    rng = np.random.default_rng(1)
    o = linear_problem(rng.standard_normal(4), rng.standard_normal((2, 4)), rng.standard_normal(2))
    rep = finite_difference_check(o, rng.standard_normal(4))
    assert max(rep.grad, rep.jac, rep.hess, rep.cons_hess) <= 1e-10


def test_finite_difference_detects_wrong_gradient():
    o = maratos_counterexample()
    o._grad = lambda z: 2.0 * z + np.array([1e-3, 0.0])
    assert finite_difference_check(o, [0.3, 0.7]).grad > 1e-4


def test_finite_difference_leaves_counters_alone():
    o = maratos_counterexample()
    o.f([0.0, 0.0])
    finite_difference_check(o, [0.1, 0.2])
    assert o.counters.snapshot() == {"f": 1.0, "g": 0.0, "H": 0.0, "c": 0.0, "J": 0.0, "cH": 0.0}


def test_counters_conservation_and_reset():
    o = maratos_counterexample()
    x = np.array([0.1, 0.2])
    calls = [("f", o.f), ("g", o.grad), ("H", o.hess), ("c", o.cons), ("J", o.jac),
             ("cH", o.cons_hess)]
    for name, fn in calls:
        before = o.counters.snapshot()
        fn(x)
        diff = o.counters - OracleCounters(**before)
        assert diff == {k: (1.0 if k == name else 0.0) for k in diff}
    o.counters.reset()
    assert all(v == 0 for v in o.counters.snapshot().values())


def test_fresh_copy_owns_counters():
    o = maratos_counterexample()
    p = o.fresh()
    p.f([0.0, 0.0])
    assert o.counters.f == 0 and p.counters.f == 1


def test_finite_sum_weighted_counters_and_means():
    X, lab = synthetic_classification(40, 6, seed=3)
    o = make_logistic_problem(make_logistic_spec(X, lab, m=2, seed=3))
    x = np.random.default_rng(0).standard_normal(6) * 0.3
    o.grad_sample(x, np.arange(10))
    assert o.counters.g == pytest.approx(0.25)
    comp = o.component_values(x)
    assert o.f(x) == pytest.approx(comp.mean(), rel=1e-12)
    np.testing.assert_allclose(o.grad(x), o.component_grads(x).mean(axis=0), rtol=1e-12)
    H_mean = np.mean([o._component_hess_mean(x, [i]) for i in range(40)], axis=0)
    np.testing.assert_allclose(o.hess(x), H_mean, rtol=1e-12, atol=1e-15)


def test_oracle_hessians_symmetric():
    for o in analytic_bank():
        H = o.hess(o.x0)
        assert np.max(np.abs(H - H.T)) <= 1e-12 * max(1.0, np.max(np.abs(H)))
        for C in o.cons_hess(o.x0):
            assert np.max(np.abs(C - C.T)) <= 1e-12 * max(1.0, np.max(np.abs(C)))


def test_primal_dual_stack():
    w = PrimalDual([1, 2], [3])
    assert w.stack().tolist() == [1.0, 2.0, 3.0]
    assert math.isclose(w.copy().x[1], 2.0)
