import numpy as np
import pytest

from spdecontrol.exceptions import DomainError
from spdecontrol.numerics.weights import (
    WeightParams,
    domination_ratios,
    gamma,
    log_gamma,
    log_rho,
    log_rho0,
    log_rho_hat,
    rho,
    rho0,
    rho_hat,
    source_schedule,
    validate,
    weight_profile,
)


def test_default_parameters_are_admissible(weight_params):
    """
    Test of the default weight parameters
    """
    assert validate(weight_params) == []


@pytest.mark.parametrize(
    "overrides, fragment",
    [
        ({"Q": 1.5}, "Q="),
        ({"P": 1.0}, "P="),
        ({"zeta": 3.5}, "zeta="),
        ({"zeta": 1.0}, "zeta="),
    ],
)
def test_validate_names_violated_constraint(weight_params, overrides, fragment):
    """
    Test of the admissibility messages
    """
    params = weight_params.model_copy(update=overrides)
    assert any(fragment in violation for violation in validate(params))


def test_weights_vanish_at_horizon(weight_params):
    """
    Test of the weights at the horizon
    """
    assert rho0(1.0, weight_params) == 0.0
    assert rho(1.0, weight_params) == 0.0
    assert rho_hat(1.0, weight_params) == 0.0
    assert log_rho0(1.0, weight_params) == -np.inf


def test_weights_are_decreasing(weight_params):
    """
    Test of the monotonicity of the weights
    """
    t = np.linspace(0.0, 0.99, 200)
    for log_w in (log_rho0, log_rho, log_rho_hat):
        assert np.all(np.diff(log_w(t, weight_params)) < 0)


def test_closed_forms_at_zero(weight_params):
    """
    Test of the weights at t = 0 against their closed forms
    """
    q = weight_params.Q ** (weight_params.s / 2)
    M, P = weight_params.M_cost, weight_params.P
    expected = -P * np.log(M) - M * P / (q - 1)
    assert log_rho0(0.0, weight_params) == pytest.approx(expected)
    assert log_rho_hat(0.0, weight_params) == pytest.approx(-M * weight_params.zeta / (q - 1))


def test_weights_reject_times_outside_horizon(weight_params):
    """
    Test of weights at times outside [0, T]
    """
    with pytest.raises(DomainError):
        log_rho(1.5, weight_params)
    with pytest.raises(DomainError):
        log_rho0(-0.1, weight_params)


def test_gamma(weight_params):
    """
    Test of gamma and its value at t = 0
    """
    assert gamma(1.0, 5.0) == pytest.approx(5.0 * np.exp(5.0))
    assert gamma(0.0, 5.0) == np.inf
    assert log_gamma(0.5, 2.0) == pytest.approx(np.log(2.0) + 4.0)


def test_source_schedule():
    """
    Test of the source block schedule
    """
    times = source_schedule(1.0, 1.2, 2.0, 4)
    np.testing.assert_allclose(times, 1.0 - 1.2 ** -np.arange(5.0))
    assert times[0] == 0.0
    assert np.all(np.diff(times) > 0)
    with pytest.raises(DomainError):
        source_schedule(1.0, 1.0, 2.0, 4)
    with pytest.raises(DomainError):
        source_schedule(1.0, 1.2, 2.0, 0)


@pytest.mark.parametrize(
    "params",
    [
        WeightParams(),
        WeightParams(s=1.5, Q=1.3, P=8.0, zeta=7.5, M_cost=2.0, T=0.7),
        WeightParams(s=3.0, Q=1.1, P=2.0, zeta=1.9, M_cost=0.8, T=1.5),
    ],
)
def test_schedule_identity(params):
    """
    Test of rho_0(T_k+2) = rho(T_k) gamma(T_k+2 - T_k+1)
    """
    times = source_schedule(params.T, params.Q, params.s, 12)
    left = log_rho0(times[2:], params)
    right = log_rho(times[:-2], params) + log_gamma(np.diff(times)[1:], params.M_cost)
    np.testing.assert_allclose(left, right, rtol=1e-12)


def test_weight_profile_window(weight_params, path):
    """
    Test of the division window of a weight profile
    """
    profile = weight_profile(weight_params, path.times)
    assert 0 < profile.stop < path.n_steps + 1
    window = profile.window_times()
    assert window[-1] <= 1.0 - 1.0 / 1024
    floor = np.log(1e-150)
    assert profile.log_rho[profile.stop - 1] >= floor
    assert profile.log_rho[profile.stop] < floor


def test_weight_profile_divide(weight_params, path):
    """
    Test of dividing by a weight on the division window
    """
    profile = weight_profile(weight_params, path.times)
    values = np.ones((path.n_steps + 1, 3))
    divided = profile.divide(values, "rho")
    assert divided.shape == (profile.stop, 3)
    np.testing.assert_allclose(divided[:, 0], np.exp(-profile.log_rho[: profile.stop]))
    assert np.all(np.isfinite(divided))


def test_domination_ratios(weight_params):
    """
    Test of the weight domination ratios
    """
    ratios = domination_ratios(weight_params)
    assert ratios["rho0_over_rho_hat"] <= 1.0
    assert ratios["rho_over_rho_hat"] <= 1.0
    assert 0 < ratios["rho_hat_pow_s_over_rho"] < np.inf
    # unbounded near the horizon for every admissible zeta
    assert ratios["derivative_rho0_over_rho_hat_sq"] > 1e100
