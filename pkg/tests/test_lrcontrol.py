import numpy as np
import pytest

from spdecontrol.exceptions import DomainError, GramianConditioningError
from spdecontrol.numerics.lrcontrol import (
    ControlSignal,
    build_lr_schedule,
    estimate_cost_constant,
    factorize,
    fit_cost_curve,
    hum_control,
    hum_gramian,
    lr_null_control,
    observability_constant,
    observability_curve,
)
from spdecontrol.numerics.paths import sample_path
from spdecontrol.numerics.sde import solve_linear
from spdecontrol.numerics.spectral import control_mass_matrix

from tests.conftest import DT, SEED


def test_schedule_layout():
    """
    Test of the Lebeau-Robbiano window layout
    """
    schedule = build_lr_schedule(1.0, 10.0, 6)
    np.testing.assert_allclose(schedule.durations, [1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128, 1 / 256])
    np.testing.assert_allclose(schedule.starts[:3], [0.0, 0.5, 0.75])
    np.testing.assert_allclose(schedule.cutoffs[:3], [10.0, 40.0, 160.0])
    last_start, last_end = schedule.active_windows()[-1]
    assert last_end + (last_end - last_start) <= 1.0


@pytest.mark.parametrize("T, M, k", [(0.0, 10.0, 6), (1.0, -1.0, 6), (1.0, 10.0, 0)])
def test_schedule_rejects_bad_arguments(T, M, k):
    """
    Test of the schedule with invalid horizon, cutoff or window count
    """
    with pytest.raises(DomainError):
        build_lr_schedule(T, M, k)


def test_discrete_gramian_converges_to_continuous(grid, region):
    """
    Test of the discrete Gramian against the continuous one
    """
    mass = control_mass_matrix(region, grid.n_modes)
    mu = grid.eigenvalues[1]
    continuous = hum_gramian(mu, 0.25, mass, grid.eigenvalues)
    coarse = hum_gramian(mu, 0.25, mass, grid.eigenvalues, dt=1 / 256)
    fine = hum_gramian(mu, 0.25, mass, grid.eigenvalues, dt=1 / 16384)
    assert continuous.shape == (2, 2)
    assert np.abs(fine - continuous).max() < np.abs(coarse - continuous).max()
    np.testing.assert_allclose(fine, continuous, rtol=1e-2)


def test_gramian_rejects_empty_cutoff(grid, region):
    """
    Test of a Gramian with no mode below the cutoff
    """
    mass = control_mass_matrix(region, grid.n_modes)
    with pytest.raises(DomainError):
        hum_gramian(1.0, 0.25, mass, grid.eigenvalues)
    with pytest.raises(DomainError):
        hum_gramian(grid.eigenvalues[0], 0.0, mass, grid.eigenvalues)


def test_hum_control_steers_projected_system(grid, region):
    """
    Test of the HUM control on the projected system
    """
    mass = control_mass_matrix(region, grid.n_modes)
    x0 = np.zeros(grid.n_modes)
    x0[:3] = [1.0, 0.3, -0.2]
    mu = grid.eigenvalues[2]
    hum = hum_control(x0, mu, 0.25, mass, grid.eigenvalues)
    rates = grid.eigenvalues[:3]
    terminal = np.exp(-rates * 0.25) * x0[:3] + hum_gramian(mu, 0.25, mass, grid.eigenvalues) @ hum.eta
    assert np.linalg.norm(terminal) < 1e-10
    assert hum.n_low == 3
    assert hum.cost > 0
    assert not hum.regularized


def test_hum_control_of_zero_state_is_free(grid, region):
    """
    Test of the HUM control of a zero state
    """
    mass = control_mass_matrix(region, grid.n_modes)
    hum = hum_control(np.zeros(grid.n_modes), grid.eigenvalues[3], 0.25, mass, grid.eigenvalues)
    assert hum.cost == 0.0
    np.testing.assert_array_equal(hum.at(np.array([0.0, 0.1])), 0.0)


def test_factorize_rejects_nonfinite():
    """
    Test of factorising a Gramian with nonfinite entries
    """
    with pytest.raises(GramianConditioningError) as error:
        factorize(np.array([[np.nan]]), window=4)
    assert error.value.window == 4


def test_factorize_regularizes_ill_conditioned():
    """
    Test of the shift applied to an ill-conditioned Gramian
    """
    factor = factorize(np.diag([1.0, 1e-14]))
    assert factor.regularized
    assert factor.condition == pytest.approx(1e14)


def test_observability_constant_grows_with_cutoff(grid, region):
    """
    Test of the observability constant against the cutoff
    """
    mass = control_mass_matrix(region, grid.n_modes)
    curve = observability_curve(0.25, 6, mass, grid.eigenvalues)
    assert curve.kappas.shape == (6,)
    assert np.all(curve.kappas > 0)
    assert np.all(np.diff(curve.kappas) >= -1e-12 * curve.kappas[1:])
    assert curve.slope > 0
    assert 0 <= curve.r2 <= 1
    assert observability_constant(grid.eigenvalues[0], 0.25, mass, grid.eigenvalues) == pytest.approx(curve.kappas[0])


def test_observability_curve_rejects_cutoff_count(grid, region):
    """
    Test of the observability curve with a single cutoff
    """
    mass = control_mass_matrix(region, grid.n_modes)
    with pytest.raises(DomainError):
        observability_curve(0.25, 1, mass, grid.eigenvalues)


def test_lr_null_control_deterministic(deterministic_model, path, y0):
    """
    Test of the Lebeau-Robbiano null control without noise
    """
    schedule = build_lr_schedule(1.0)
    result = lr_null_control(y0, deterministic_model, path, schedule)
    assert result.converged
    assert result.terminal_norm <= 1e-3 * np.linalg.norm(y0)
    assert result.windows[0].n_low == 1
    assert result.windows[0].residual < 1e-8
    # passive half of the first window carries no control
    np.testing.assert_array_equal(result.control.coefficients[64:128], 0.0)
    assert result.control.is_passive(100)
    assert not result.control.is_passive(10)


def test_lr_null_control_with_noise(model, path, y0):
    """
    Test of the Lebeau-Robbiano null control with multiplicative noise
    """
    result = lr_null_control(y0, model, path, build_lr_schedule(1.0))
    assert len(result.trajectory) == path.n_steps + 1
    assert result.terminal_norm < np.linalg.norm(solve_linear(y0, model, path).coefficients[-1])
    assert [w.index for w in result.windows] == list(range(len(result.windows)))
    assert result.control.cost > 0


def test_control_is_linear_in_initial_state(model, path, y0):
    """
    Test of the linearity of the control in the initial state
    """
    schedule = build_lr_schedule(1.0)
    single = lr_null_control(y0, model, path, schedule)
    double = lr_null_control(2 * y0, model, path, schedule)
    np.testing.assert_allclose(double.control.coefficients, 2 * single.control.coefficients, rtol=1e-9, atol=1e-300)
    assert double.control.cost == pytest.approx(4 * single.control.cost, rel=1e-9)


def test_control_is_adapted(model, y0):
    """
    Test of the control on paths that agree up to a time
    """
    path = sample_path(SEED, DT, 1.0, 2)
    increments = np.array(path.increments)
    increments[150:] *= -1
    altered = type(path)(path.seed, path.dt, path.horizon, increments, np.concatenate(([0.0], np.cumsum(increments))))
    schedule = build_lr_schedule(1.0)
    original = lr_null_control(y0, model, path, schedule).control.coefficients
    changed = lr_null_control(y0, model, altered, schedule).control.coefficients
    np.testing.assert_array_equal(original[:151], changed[:151])


def test_control_signal_cost(region, grid):
    """
    Test of the cost of a control signal
    """
    mass = control_mass_matrix(region, grid.n_modes)
    coefficients = np.zeros((5, grid.n_modes))
    coefficients[:4, 0] = 1.0
    signal = ControlSignal.build(coefficients, 0.25, mass, [(0, 4)])
    assert signal.cost == pytest.approx(mass[0, 0])


def test_fit_cost_curve_recovers_exact_law():
    """
    Test of the cost fit on exact C exp(C / T) data
    """
    horizons = [0.25, 0.5, 1.0]
    fit = fit_cost_curve(horizons, [np.exp(1.0 + 2.0 / T) for T in horizons])
    assert fit.c0 == pytest.approx(1.0)
    assert fit.c1 == pytest.approx(2.0)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.M_cost == pytest.approx(np.e)


def test_fit_cost_curve_rejects_bad_input():
    """
    Test of the cost fit with too few horizons or a zero cost
    """
    with pytest.raises(DomainError):
        fit_cost_curve([0.5, 1.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        fit_cost_curve([0.25, 0.5, 1.0], [1.0, 0.0, 2.0])


def test_estimate_cost_constant_deterministic(deterministic_model, y0):
    """
    Test of the cost sweep without noise
    """
    points, fit = estimate_cost_constant([1.0, 0.25, 0.5], 1, y0, deterministic_model, DT, SEED)
    assert [p.T for p in points] == [0.25, 0.5, 1.0]
    # the cutoff grows like T^-2, the longest horizon keeps M_spec
    assert [p.M_spec for p in points] == pytest.approx([160.0, 40.0, 10.0])
    medians = [p.cost_median for p in points]
    assert medians[0] > medians[1] > medians[2] > 0
    assert fit.c1 > 0
    assert fit.M_cost >= np.exp(fit.c0)


def test_estimate_cost_constant_rejects_horizon(deterministic_model, y0):
    """
    Test of the cost sweep with a horizon above 1
    """
    with pytest.raises(DomainError):
        estimate_cost_constant([0.5, 1.0, 2.0], 1, y0, deterministic_model, DT)
