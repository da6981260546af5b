import numpy as np
import pytest

from elapsed_stability.errors import ConfigurationError, DomainError
from elapsed_stability.firing import (ConstantRate, CustomCurve, CustomModel, RefractoryModel, SatQuad,
                                      Sigmoid9, central_difference, cumulative_S, eval_dSdr, eval_S,
                                      refractory_as_custom, survival)

SQ = RefractoryModel(1.0, SatQuad(0.1849))
SIG = RefractoryModel(0.5, Sigmoid9(1.0))
UNIT = RefractoryModel(0.5, ConstantRate(1.0))


def test_rate_zero_below_refractory_age():
    assert eval_S(SIG, 0.3, 0.5) == 0.0


def test_sigmoid_rate_by_hand():
    assert eval_S(SIG, 1.0, 0.5) == pytest.approx(1 / (1 + np.exp(-1.0)), abs=1e-12)
    assert eval_S(SIG, 1.0, 0.5) == pytest.approx(0.731059, abs=1e-6)


def test_satquad_rate_by_hand():
    # reference value quoted to five digits
    assert eval_S(SQ, 2.0, 0.4729) == pytest.approx(0.89707, abs=5e-5)


def test_boundary_age_counts_as_active():
    assert eval_S(SQ, 1.0, 0.4729) == eval_S(SQ, 2.0, 0.4729)


def test_satquad_derivative_by_hand():
    assert eval_dSdr(SQ, 2.0, 0.4729) == pytest.approx(1.61264, abs=1e-4)


def test_derivative_vanishes_for_constant_rate_and_below_sigma():
    assert eval_dSdr(UNIT, 3.0, 0.7) == 0.0
    assert eval_dSdr(SQ, 0.2, 0.7) == 0.0


def test_cumulative_closed_forms():
    assert cumulative_S(UNIT, 2.0, 0.3) == pytest.approx(1.5)
    assert cumulative_S(SQ, 0.0, 0.3) == 0.0
    assert cumulative_S(SQ, 3.0, 0.4729) == pytest.approx(1.79414, abs=1e-4)


def test_survival_values():
    assert survival(SQ, 0.0, 0.4729) == 1.0
    assert survival(UNIT, 1.5, 0.2) == pytest.approx(np.exp(-1.0))
    assert survival(SQ, 2.0, 0.4729) == pytest.approx(0.40778, abs=5e-5)


def test_vectorized_evaluation_matches_scalar():
    a = np.array([0.1, 0.5, 1.0, 2.0])
    r = 0.4
    vec = eval_S(SQ, a, r)
    assert np.allclose(vec, [eval_S(SQ, x, r) for x in a])


@pytest.mark.parametrize("a, r", [(-0.1, 0.2), (0.5, -1.0)])
def test_negative_inputs_rejected(a, r):
    with pytest.raises(DomainError):
        eval_S(SQ, a, r)


@pytest.mark.parametrize("model", [SQ, SIG])
def test_analytic_derivative_matches_finite_difference(model):
    for r in np.linspace(0.01, 1.5, 13):
        fd = central_difference(lambda x: model.rate(2.0, x), r)
        exact = model.dS_dr(2.0, r)
        assert abs(fd - exact) <= 1e-5 * max(abs(exact), 1e-3)


def test_cumulative_lower_bound_and_monotone():
    a = np.linspace(0, 20, 201)
    for r in (0.0, 0.3, 1.0):
        c = cumulative_S(SQ, a, r)
        assert np.all(np.diff(c) >= 0)
        assert np.all(c >= SQ.s0 * np.maximum(a - SQ.sigma, 0) - 1e-12)


def test_custom_wrapper_matches_closed_form():
    custom = refractory_as_custom(SQ)
    for a in (0.5, 1.0, 2.5, 7.0):
        assert custom.cumulative(a, 0.47) == pytest.approx(SQ.cumulative(a, 0.47), abs=1e-9)
        assert custom.dS_dr(a, 0.47) == pytest.approx(SQ.dS_dr(a, 0.47), rel=1e-5, abs=1e-9)


def test_custom_without_derivative_or_fd_is_rejected():
    model = CustomModel(lambda a, r: np.ones_like(a) + 0 * r, 0.0, 1.0, allow_fd=False)
    with pytest.raises(ConfigurationError):
        model.dS_dr(1.0, 0.5)


def test_custom_model_requires_positive_lower_rate():
    with pytest.raises(ConfigurationError):
        CustomModel(lambda a, r: a + r, 0.0, 0.0)


def test_custom_curve_finite_difference_derivative():
    curve = CustomCurve(lambda r: 1.0 + r ** 2, 1.0)
    assert curve.derivative(0.5) == pytest.approx(1.0, rel=1e-6)


def test_hazard_curve_ranges():
    r = np.linspace(0, 3, 301)
    s = Sigmoid9(1.3)(r)
    assert np.all((s > 0) & (s < 1))
    q = SatQuad(0.3)(np.linspace(0, 1e3, 501))
    assert np.all((q >= 0.5) & (q < 10.5))
