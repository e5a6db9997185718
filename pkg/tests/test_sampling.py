import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlsqp.problem_suite import make_logistic_problem, make_logistic_spec, synthetic_classification
from mlsqp.sampling import (ADAPTIVE_HESSIAN, CONSTANT_FRACTION, FULL, GEOMETRIC_GAP, STREAMS,
                            BoundConstants, ScheduleError, adaptive_hessian_size, build_schedule,
                            draw_samples, error_bounds, estimate_bound_constants,
                            parse_schedule_key, subsampled_estimates)


def small_logistic(N=40, n=4, seed=0):
    X, lab = synthetic_classification(N, n, seed)
    return make_logistic_problem(make_logistic_spec(X, lab, m=2, seed=seed))


def test_draw_samples_golden_and_deterministic():
    s = draw_samples(10, 3, seed=0, iteration=0, stream=0)
    np.testing.assert_array_equal(s, [5, 6, 9])
    np.testing.assert_array_equal(s, draw_samples(10, 3, 0, 0, 0))
    assert not np.array_equal(s, draw_samples(10, 3, 0, 0, STREAMS["g"]))
    np.testing.assert_array_equal(draw_samples(10, 10, 3, 7), np.arange(10))
    with pytest.raises(ValueError):
        draw_samples(10, 0, 0, 0)
    with pytest.raises(ValueError):
        draw_samples(10, 11, 0, 0)


@settings(max_examples=100)
@given(st.integers(1, 200), st.data())
def test_draw_samples_properties(N, data):
    size = data.draw(st.integers(1, N))
    s = draw_samples(N, size, data.draw(st.integers(0, 999)), data.draw(st.integers(0, 99)))
    assert len(s) == size and len(np.unique(s)) == size
    assert np.all(np.diff(s) > 0) and s.min() >= 0 and s.max() < N


def test_error_bounds_examples():
    const = BoundConstants(1.0, 1.0, 1.0)
    assert error_bounds(100, (100, 100, 100), const) == (0.0, 0.0, 0.0)
    assert error_bounds(100, (50, 50, 50), const) == (1.0, 1.0, 1.0)
    eps = error_bounds(100, (10, 90, 100), BoundConstants(2.0, 3.0, 4.0))
    assert eps == pytest.approx((3.6, 0.6, 0.0))
    with pytest.raises(ValueError):
        error_bounds(100, (0, 1, 1), const)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 5), st.integers(1, 40), st.integers(1, 40), st.integers(1, 40))
def test_error_bounds_are_sound(seed, sf, sg, sh):
    """Sampled estimates stay within the bounds built from the component maxima."""
    p = small_logistic(seed=seed % 7)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(p.n)
    N = p.N
    sets = tuple(draw_samples(N, s, seed, 0, i) for i, s in enumerate((sf, sg, sh)))
    f, g, H = subsampled_estimates(p, x, sets)
    const = BoundConstants(np.max(np.abs(p.component_values(x))),
                           np.max(np.linalg.norm(p.component_grads(x), axis=1)),
                           np.max(p.component_hess_norms(x)))
    ef, eg, eh = error_bounds(N, (sf, sg, sh), const)
    tol = 1e-12
    assert abs(f - p.f(x)) <= ef + tol
    assert np.linalg.norm(g - p.grad(x)) <= eg + tol
    assert np.linalg.norm(H - p.hess(x), 2) <= eh + tol


def test_subsampled_full_set_matches_full_evaluation():
    p = small_logistic()
    x = np.full(p.n, 0.3)
    full = np.arange(p.N)
    f, g, H = subsampled_estimates(p, x, (full, full, None))
    assert f == pytest.approx(p.f(x), rel=1e-14)
    np.testing.assert_allclose(g, p.grad(x), rtol=1e-13)
    assert H is None
    with pytest.raises(ValueError):
        subsampled_estimates(p, x, (np.array([], int), None, None))


def test_estimate_bound_constants_dominate_start_point():
    p = small_logistic()
    x0 = np.zeros(p.n)
    c = estimate_bound_constants(p, x0, seed=1)
    assert c.source == "estimated"
    assert c.kf_bound >= np.max(np.abs(p.component_values(x0)))
    assert c.kg_bound >= np.max(np.linalg.norm(p.component_grads(x0), axis=1))


def test_full_and_fraction_schedules():
    s = build_schedule(FULL, None, 50, horizon=10)
    assert s.is_full and s(7) == 50 and s(500) == 50
    f = build_schedule(CONSTANT_FRACTION, {"p": 0.1}, 1000, horizon=5)
    assert f.sizes == (100,) * 6 and not f.is_full
    assert build_schedule(CONSTANT_FRACTION, {"p": 1e-9}, 10).size(0) == 1
    with pytest.raises(ScheduleError):
        build_schedule(CONSTANT_FRACTION, {"p": 0.0}, 10)


def test_adaptive_hessian_schedule():
    assert adaptive_hessian_size(0, 1000) == 50
    assert adaptive_hessian_size(0, 10) == 1
    s = build_schedule(ADAPTIVE_HESSIAN, None, 1000, horizon=200)
    assert s(0) == 50 and s(1) == 74
    assert all(b >= a for a, b in zip(s.sizes, s.sizes[1:]))
    assert s(200) <= 1000


def test_geometric_gap_examples():
    s = build_schedule(GEOMETRIC_GAP, {"r": 0.5, "s0": 50}, 100, horizon=10)
    assert s.sizes[:7] == (50, 75, 88, 94, 97, 99, 100)
    assert s(1000) == 100
    gaps = 100 - np.asarray(s.sizes)
    assert np.all(gaps[1:] <= 0.5 * gaps[:-1] + 1e-12)
    assert np.sum(gaps / 100) <= 50 / (100 * 0.5)
    with pytest.raises(ScheduleError):
        build_schedule(GEOMETRIC_GAP, {"r": 1.0}, 100)
    with pytest.raises(ScheduleError):
        build_schedule(GEOMETRIC_GAP, {"r": 0.5, "s0": 0}, 100)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.01, 1.0), st.integers(1, 500))
def test_geometric_gap_always_verifies(r, frac0, N):
    s = build_schedule(GEOMETRIC_GAP, {"r": r, "frac0": frac0}, N, horizon=60)
    sizes = np.asarray(s.sizes)
    assert np.all(np.diff(sizes) >= 0)
    assert np.all((np.diff(sizes) > 0) | (sizes[1:] == N))


def test_parse_schedule_key():
    assert parse_schedule_key("full", 10).kind == FULL
    assert parse_schedule_key("frac:0.5", 10).size(0) == 5
    assert parse_schedule_key("geo:0.5", 100).size(0) == 50
    assert parse_schedule_key("geo:0.5:0.2", 100).size(0) == 20
    assert parse_schedule_key("adaptive-hess", 1000).size(0) == 50
    for bad in ("", "frac", "frac:x", "geo:2", "nope", "full:1"):
        with pytest.raises(ScheduleError):
            parse_schedule_key(bad, 10)
