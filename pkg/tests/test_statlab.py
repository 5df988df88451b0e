from types import SimpleNamespace

import numpy as np
import pytest

from spdecontrol.exceptions import DivergenceError, DomainError
from spdecontrol.numerics.sde import HeatModel
from spdecontrol.numerics.semilinear import NonlinearitySpec, SemilinearProblem, TruncationParams
from spdecontrol.numerics.spectral import SpectralGrid, mode_norms
from spdecontrol.numerics.statlab import (
    EnsembleConfig,
    PathRecord,
    calibrate,
    calibrate_delta,
    clopper_pearson,
    estimate_probability,
    markov_bound,
    merge_records,
    run_ensemble,
    run_path,
    sample_initial_data,
    summarize,
)

from tests.conftest import DT, SEED


def record(path_id, x_norm_T=0.5, seed=SEED, **fields):
    return PathRecord(path_id=path_id, seed=seed, y0_h1=0.01, x_norm_T=x_norm_T, **fields)


def failed(path_id, seed=SEED):
    return PathRecord(path_id=path_id, seed=seed, y0_h1=0.01, error="DivergenceError: no contraction")


@pytest.fixture(scope="module")
def problem(region, weight_params):
    model = HeatModel(SpectralGrid(1.0, 8, 16), region, a=0.5)
    return SemilinearProblem(model, NonlinearitySpec.preset("burgers"), TruncationParams(1.0), weight_params, DT)


def test_clopper_pearson_edges():
    """
    Test of the exact interval at zero and full success
    """
    low, high = clopper_pearson(0, 10)
    assert low == 0.0
    assert high == pytest.approx(1 - 0.025**0.1)
    low, high = clopper_pearson(10, 10)
    assert low == pytest.approx(0.025**0.1)
    assert high == 1.0


def test_clopper_pearson_is_symmetric():
    """
    Test of the exact interval under swapping successes and failures
    """
    low, high = clopper_pearson(37, 100)
    mirrored_low, mirrored_high = clopper_pearson(63, 100)
    assert low == pytest.approx(1 - mirrored_high)
    assert high == pytest.approx(1 - mirrored_low)
    assert low < 0.37 < high


def test_estimate_probability_skips_failures():
    """
    Test of the probability estimate with failed paths
    """
    records = [record(0, 0.5), record(1, 2.0), record(2, 0.9), failed(3)]
    estimate = estimate_probability(records, R=1.0)
    assert estimate.n == 3
    assert estimate.successes == 2
    assert estimate.p_hat == pytest.approx(2 / 3)
    assert estimate.ci_low < estimate.p_hat < estimate.ci_high


def test_estimate_probability_needs_records():
    """
    Test of the probability estimate without successful paths
    """
    with pytest.raises(DomainError):
        estimate_probability([failed(0)], R=1.0)


def test_markov_bound_and_delta():
    """
    Test of the Markov bound and the calibrated scale
    """
    assert markov_bound(4.0, 0.1, 2.0) == pytest.approx(0.01)
    delta = calibrate_delta(4.0, 2.0, 0.01)
    assert delta == pytest.approx(0.1)
    assert markov_bound(4.0, delta, 2.0) == pytest.approx(0.01)
    with pytest.raises(DomainError):
        markov_bound(1.0, 0.1, 0.0)
    with pytest.raises(DomainError):
        calibrate_delta(0.0, 1.0, 0.05)


def test_sample_initial_data(grid):
    """
    Test of the random initial data of a path
    """
    y0 = sample_initial_data(SEED, 3, 0.01, grid)
    assert mode_norms(y0, grid.eigenvalues, 1) == pytest.approx(0.01)
    np.testing.assert_array_equal(y0[8:], 0.0)
    np.testing.assert_array_equal(y0, sample_initial_data(SEED, 3, 0.01, grid))
    assert not np.array_equal(y0, sample_initial_data(SEED, 4, 0.01, grid))


def test_run_path_records_failures(grid, region):
    """
    Test of run_path on a diverging path
    """
    def solve(y0, path):
        raise DivergenceError("Picard iteration does not contract", [1.2, 1.3, 1.4])

    fake = SimpleNamespace(
        model=HeatModel(grid, region),
        trunc=TruncationParams(1.0),
        solve=solve,
        path=lambda seed, index: None,
    )
    outcome = run_path(fake, EnsembleConfig(seed=SEED), 5)
    assert outcome.failed
    assert outcome.path_id == 5
    assert outcome.error.startswith("DivergenceError")
    assert outcome.x_norm_T is None
    assert outcome.y0_h1 == pytest.approx(0.01)


def test_run_path_records_arithmetic_failures(grid, region):
    """
    Test of run_path on a solver that overflows a float
    """

    def solve(y0, path):
        raise OverflowError("(34, 'Numerical result out of range')")

    fake = SimpleNamespace(
        model=HeatModel(grid, region),
        trunc=TruncationParams(1.0),
        solve=solve,
        path=lambda seed, index: None,
    )
    outcome = run_path(fake, EnsembleConfig(seed=SEED), 2)
    assert outcome.failed
    assert outcome.error.startswith("OverflowError")


def test_run_ensemble_is_sorted_and_reports_progress(problem):
    """
    Test of the ensemble records order and the progress callback
    """
    seen = []
    config = EnsembleConfig(n_paths=2, seed=SEED, delta=0.01)
    records = run_ensemble(problem, config, indices=[1, 0], progress=seen.append)
    assert [r.path_id for r in records] == [0, 1]
    assert len(seen) == 2
    assert all(not r.failed for r in records)
    assert all(r.terminal_norm <= 1e-6 for r in records)


def test_calibrate(problem):
    """
    Test of the linear-regime calibration
    """
    config = EnsembleConfig(n_paths=2, seed=SEED, calibration_paths=2, eps=0.05)
    calibration = calibrate(problem, config)
    assert calibration.C_hat_sq > 0
    assert calibration.R == calibration.R_policy
    assert calibration.C_hat_sq * calibration.R ** (2 * (problem.spec.p - 1)) == pytest.approx(0.5)
    assert calibration.delta == pytest.approx(calibrate_delta(calibration.C_hat_sq, calibration.R, 0.05))
    assert len(calibration.records) == 2


def test_calibrate_keeps_configured_radius(problem):
    """
    Test of the calibration with a configured radius
    """
    config = EnsembleConfig(n_paths=2, seed=SEED, calibration_paths=2, R=3.0)
    assert calibrate(problem, config).R == 3.0


def test_summarize():
    """
    Test of the ensemble summary
    """
    records = [record(0, 0.5), record(1, 0.7), failed(2)]
    summary = summarize(records, C_hat_sq=2.0, delta=0.1, R=1.0)
    assert summary.n_paths == 3
    assert summary.failures == 1
    assert summary.p_hat == 1.0
    assert summary.eps_predicted == pytest.approx(0.02)


def test_merge_records():
    """
    Test of merging two ensembles
    """
    first = [record(0), record(1)]
    second = [record(0, seed=SEED + 1)]
    merged = merge_records(first, second)
    assert [(r.seed, r.path_id) for r in merged] == [(SEED, 0), (SEED, 1), (SEED + 1, 0)]
    with pytest.raises(DomainError):
        merge_records(first, [record(1)])
