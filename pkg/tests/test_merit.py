import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlsqp.merit import (BoundSurrogates, LineSearchFailure, MeritState, RelaxationBudget,
                         backtrack, classical_condition, merit_phi, model_reduction,
                         modified_condition, relaxation_eps_A, update_merit_parameter)

SQ2 = math.sqrt(2.0)


def test_merit_phi_examples():
    assert merit_phi(3.5, np.zeros(2), 1.0) == 3.5
    assert merit_phi(5 - 2 * SQ2, np.zeros(1), 0.1) == pytest.approx(0.217157, abs=1e-6)
    for tau in (0.01, 1.0, 7.0):
        assert merit_phi(0.0, np.array([1.0, -2.0]), tau) == 3.0


def test_model_reduction_examples():
    c = np.array([0.5, -1.0])
    assert model_reduction(0.3, np.ones(2), np.zeros(2), c) == 1.5
    assert model_reduction(0.5, np.array([1.0, 0]), np.array([-2.0, 0]), np.zeros(1)) == 1.0


def test_update_infinite_trial_keeps_tau():
    s = update_merit_parameter(MeritState(0.7, 0.7), np.array([1.0]), np.array([-1.0]), -2.0, 3.0)
    assert s.tau_trial == math.inf and s.tau == 0.7


def test_update_decrease_branch():
    s = update_merit_parameter(MeritState(1.0, 1.0), np.array([1.0]), np.array([1.0]), 1.0, 2.0)
    assert s.tau_trial == 0.5 and s.tau == 0.25


def test_update_keep_branch():
    s = update_merit_parameter(MeritState(0.1, 0.1), np.array([1.0]), np.array([1.0]), 1.0, 2.0)
    assert s.tau == 0.1


@settings(max_examples=200)
@given(st.floats(1e-3, 10), st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 5),
       st.floats(-5, 5))
def test_update_guarantees_model_reduction(tau0, gd, dWd, c_l1, extra):
    s = update_merit_parameter(MeritState(tau0, tau0), np.array([gd]), np.array([1.0]), dWd, c_l1)
    assert 0 < s.tau <= tau0
    assert s.tau <= s.tau_trial
    dl = -s.tau * gd + c_l1
    rhs = s.tau * max(dWd, 0.0) + s.sigma * c_l1
    # the keep-branch inequality needs g'd + max(d'Wd, 0) <= 0 when c = 0
    if c_l1 > 0 or gd + max(dWd, 0) <= 0:
        assert dl >= rhs - 1e-10 * max(1.0, abs(gd), abs(dWd), c_l1)


def test_relaxation_examples():
    assert relaxation_eps_A(RelaxationBudget(0.0, 0.0), 3.0) == 0.0
    assert relaxation_eps_A(RelaxationBudget(0.5, 0.0), 1.0) == 1.0
    assert relaxation_eps_A(RelaxationBudget(0.0, 0.1, BoundSurrogates()), 1.0) == \
        pytest.approx(0.31, abs=1e-15)


def test_classical_examples():
    assert classical_condition(1.0, 1.0, 1.0, 0.0, 1e-4)
    assert not classical_condition(1.0 + 1e-16 * 10, 1.0, 1.0, 0.0, 1e-4)
    assert classical_condition(0.9, 1.0, 1.0, 1.0, 1e-4)


def test_modified_example():
    assert modified_condition(1.05, 1.0, 1.0, 0.1, 1e-4, 1.0, 0.2, 0.05)
    assert not classical_condition(1.05, 1.0, 1.0, 0.1, 1e-4)
    with pytest.raises(ValueError):
        modified_condition(1.0, 1.0, 1.0, 0.1, 1e-4, 1.0, 0.2, -0.1)


@settings(max_examples=300)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(1e-6, 1), st.floats(0, 10),
       st.floats(1e-6, 0.5))
def test_modified_degenerates_to_classical(phi_t, phi_c, alpha, dl, eta):
    assert modified_condition(phi_t, phi_c, alpha, dl, eta, 1.0, 0.0, 0.0, 0.0) == \
        classical_condition(phi_t, phi_c, alpha, dl, eta, 0.0)


def test_backtrack_examples():
    r = backtrack(lambda a: (0.0, 1.0))
    assert (r.alpha, r.backtracks) == (1.0, 0)
    r = backtrack(lambda a: (a, 0.3), nu_alpha=0.5)
    assert (r.alpha, r.backtracks) == (0.25, 2)
    assert r.lhs <= r.rhs and r.alpha == 0.5 ** r.backtracks
    calls = []
    with pytest.raises(LineSearchFailure):
        backtrack(lambda a: (calls.append(a) or 1.0, 0.0))
    assert len(calls) == 61 and calls[-1] == pytest.approx(8.67e-19, rel=1e-3)


def test_state_validation():
    with pytest.raises(ValueError):
        MeritState(tau=0.0)
    with pytest.raises(ValueError):
        MeritState(sigma=1.0)
