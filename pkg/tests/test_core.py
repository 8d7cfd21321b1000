import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasibayes.core import (
    Criterion,
    ParamPoint,
    ParamSpace,
    Prior,
    contains,
    log_quasi_posterior,
    quadratic_criterion,
    temper,
)
from quasibayes.errors import CriterionEvaluationError, InvalidArgumentError


def test_quadratic_log_posterior_at_maximiser():
    c = Criterion(lambda t: -0.5 * (t[0] - 1.0) ** 2, 1, 1)
    p = Prior.flat(ParamSpace([-10.0], [10.0]))
    assert log_quasi_posterior(c, p, [1.0]) == 0.0


def test_outside_space_is_minus_inf():
    c = Criterion(lambda t: -0.5 * (t[0] - 1.0) ** 2, 1, 1)
    p = Prior.flat(ParamSpace([-10.0], [10.0]))
    assert log_quasi_posterior(c, p, [11.0]) == -math.inf


def test_user_prior_adds_log_density():
    c = Criterion(lambda t: -50.0 * (t[0] - 0.3) ** 2, 1, 1)
    p = Prior(ParamSpace([-10.0], [10.0]), lambda t: -0.5 * t[0] ** 2)
    assert p.kind == "user-log-density"
    assert log_quasi_posterior(c, p, [0.3]) == pytest.approx(-0.045, abs=1e-15)


@pytest.mark.parametrize("theta,expected", [((0, 0), True), ((10.5, 0), False),
                                            ((10, -10), True)])
def test_contains_box(theta, expected):
    space = ParamSpace([-10, -10], [10, 10])
    assert contains(space, theta) is expected


def test_contains_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        contains(ParamSpace([-1, -1], [1, 1]), [0.0])


def test_space_validation():
    with pytest.raises(InvalidArgumentError):
        ParamSpace([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        ParamSpace([0.0], [1.0, 2.0])


def test_param_point_is_immutable_and_hashable():
    a = ParamPoint([1.0, 2.0])
    with pytest.raises(ValueError):
        a.theta[0] = 5.0
    assert a == ParamPoint(np.array([1.0, 2.0]))
    assert len({a, ParamPoint([1.0, 2.0])}) == 1
    assert np.asarray(a).tolist() == [1.0, 2.0]


def test_criterion_dimension_check():
    c = quadratic_criterion([0.0, 0.0], np.eye(2), 10)
    with pytest.raises(InvalidArgumentError):
        c([1.0])


def test_nan_raises_unless_tolerant():
    c = Criterion(lambda t: float("nan"), 1, 5)
    with pytest.raises(CriterionEvaluationError) as info:
        c([0.25])
    assert info.value.theta == (0.25,)
    assert c.with_tolerance(True)([0.25]) == -math.inf


def test_evaluation_error_carries_theta():
    def bad(t):
        raise CriterionEvaluationError("boom")

    with pytest.raises(CriterionEvaluationError, match="0.5"):
        Criterion(bad, 1, 1)([0.5])
    assert Criterion(bad, 1, 1, tolerant=True)([0.5]) == -math.inf


def test_temper_identity_and_scaling():
    c = quadratic_criterion([1.0], [[2.0]], 3)
    assert temper(c, 1) is c
    t = c.tempered(4.0)
    assert t([0.0]) == pytest.approx(4.0 * c([0.0]))
    with pytest.raises(InvalidArgumentError):
        temper(c, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.floats(-100, 100))
def test_shift_moves_values_by_constant(theta, k):
    c = quadratic_criterion([0.5, -0.5], [[2.0, 0.3], [0.3, 1.0]], 7)
    assert c.shifted(k)(theta) == pytest.approx(c(theta) + k, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_quadratic_criterion_is_nonpositive(theta):
    A = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.1], [0.0, 0.1, 3.0]])
    c = quadratic_criterion(np.zeros(3), A, 11)
    u = np.asarray(theta)
    assert c(theta) == pytest.approx(-0.5 * 11 * u @ A @ u)
    assert c(theta) <= 0.0
