import numpy as np
import pytest

from spdecontrol.exceptions import DomainError
from spdecontrol.numerics.sde import HeatModel, SourceKind, solve_linear
from spdecontrol.numerics.semilinear import (
    NonlinearitySpec,
    SemilinearProblem,
    TruncationParams,
    estimate_c_and_r,
    eval_f,
    eval_g,
    lipschitz_probe,
    running_x_norm,
    truncated_source_terms,
    x_norm,
)
from spdecontrol.numerics.spectral import SpectralGrid, mode_norms
from spdecontrol.numerics.weights import WeightParams, weight_profile

from tests.conftest import DT, SEED


@pytest.fixture(scope="module")
def problem(region, weight_params):
    model = HeatModel(SpectralGrid(1.0, 8, 16), region, a=0.5)
    return SemilinearProblem(model, NonlinearitySpec.preset("burgers"), TruncationParams(1.0), weight_params, DT)


@pytest.fixture(scope="module")
def contracting(region):
    model = HeatModel(SpectralGrid(1.0, 8, 16), region, a=0.5)
    weights = WeightParams(s=2.0, Q=1.2, P=3.0, zeta=2.9, M_cost=1e-4, T=1.0)
    return SemilinearProblem(model, NonlinearitySpec.preset("burgers"), TruncationParams(1.0), weights, DT)


@pytest.fixture
def small_y0():
    y0 = np.zeros(8)
    y0[:3] = [1.0, -0.5, 0.25]
    return y0


def test_presets():
    """
    Test of the nonlinearity presets
    """
    burgers = NonlinearitySpec.preset("burgers")
    assert burgers.beta == -1.0 and burgers.gamma_coef == 0.1
    assert burgers.s == 2.0
    allen_cahn = NonlinearitySpec.preset("allen-cahn")
    assert allen_cahn.alpha == -1.0 and allen_cahn.drift_shift == 1.0
    assert allen_cahn.s == 2.0
    assert NonlinearitySpec.preset("linear").is_linear
    assert NonlinearitySpec.preset("burgers", beta=-2.0).beta == -2.0


def test_unknown_preset():
    """
    Test of an unknown nonlinearity preset
    """
    with pytest.raises(DomainError):
        NonlinearitySpec.preset("navier-stokes")


def test_cutoff_profile():
    """
    Test of the smoothstep cutoff
    """
    trunc = TruncationParams(2.0)
    assert trunc.phi(0.0) == 1.0
    assert trunc.phi(2.0) == 1.0
    assert trunc.phi(3.0) == pytest.approx(0.5)
    assert trunc.phi(4.0) == 0.0
    assert trunc.phi(100.0) == 0.0
    s = np.linspace(0.0, 5.0, 101)
    assert np.all(np.diff(trunc.phi(s)) <= 0)
    assert trunc.max_slope == pytest.approx(0.75)


def test_cutoff_rejects_radius():
    """
    Test of a cutoff with zero radius
    """
    with pytest.raises(DomainError):
        TruncationParams(0.0)


def test_burgers_term_of_single_mode(grid):
    """
    Test of the Burgers term of one sine mode
    """
    coefficients = np.zeros(grid.n_modes)
    coefficients[0] = 1.0
    # -y y_x = -pi sin(2 pi x) for y = sqrt(2) sin(pi x)
    expected = np.zeros(grid.n_modes)
    expected[1] = -np.pi / np.sqrt(2.0)
    np.testing.assert_allclose(eval_f(coefficients, NonlinearitySpec.preset("burgers"), grid), expected, atol=1e-10)


def test_sources_vanish_for_linear_preset(grid):
    """
    Test of the sources of the linear preset
    """
    coefficients = np.ones((3, grid.n_modes))
    spec = NonlinearitySpec.preset("linear")
    np.testing.assert_array_equal(eval_f(coefficients, spec, grid), 0.0)
    np.testing.assert_array_equal(eval_g(coefficients, spec, grid), 0.0)


def test_sources_are_dealiased(grid):
    """
    Test of the two-thirds rule on the sources
    """
    rng = np.random.default_rng(SEED)
    coefficients = rng.standard_normal((2, grid.n_modes)) / np.arange(1, grid.n_modes + 1)
    values = eval_g(coefficients, NonlinearitySpec.preset("burgers"), grid)
    np.testing.assert_array_equal(values[:, (2 * grid.n_modes) // 3 :], 0.0)


def test_running_x_norm_is_nondecreasing(problem, path, small_y0):
    """
    Test of the running X_t norm along a trajectory
    """
    trajectory = solve_linear(small_y0, problem.model, path)
    profile = weight_profile(problem.weights, path.times)
    norms = running_x_norm(trajectory, profile, problem.model.grid)
    assert np.all(np.diff(norms) >= 0)
    assert np.all(norms[profile.stop :] == norms[profile.stop - 1])
    assert x_norm(trajectory, profile, problem.model.grid, 0.5) == norms[128]
    with pytest.raises(DomainError):
        x_norm(trajectory, profile, problem.model.grid, 0.5 + DT / 2)


def test_truncated_sources_switch_off_above_radius(problem, path, small_y0):
    """
    Test of the truncated sources of a trajectory above 2R
    """
    trajectory = solve_linear(small_y0, problem.model, path)
    profile = weight_profile(problem.weights, path.times)
    F, G, norms = truncated_source_terms(trajectory, problem.spec, TruncationParams(1.0), profile, problem.model.grid)
    assert F.kind is SourceKind.DRIFT and G.kind is SourceKind.DIFFUSION
    # ||y0 / rho_hat(0)|| is far above 2R
    assert norms[0] > 2.0
    assert F.is_zero and G.is_zero


def test_lipschitz_probe_of_identical_inputs(problem, path, small_y0):
    """
    Test of the Lipschitz ratio of a trajectory with itself
    """
    trajectory = solve_linear(small_y0, problem.model, path)
    profile = weight_profile(problem.weights, path.times)
    ratio = lipschitz_probe(trajectory, trajectory, 0.25, problem.spec, problem.trunc, profile, problem.model.grid)
    assert ratio == 0.0


def test_lipschitz_probe_rejects_mismatched_nodes(problem, path, small_y0):
    """
    Test of the Lipschitz ratio on trajectories with other nodes
    """
    first = solve_linear(small_y0, problem.model, path)
    second = solve_linear(small_y0, problem.model, path, window=(0.0, 0.5))
    profile = weight_profile(problem.weights, path.times)
    with pytest.raises(DomainError):
        lipschitz_probe(first, second, 0.25, problem.spec, problem.trunc, profile, problem.model.grid)


def test_linear_problem_needs_one_iteration(problem, path, small_y0):
    """
    Test of the Picard iteration of the linear problem
    """
    result = problem.linearized().solve(small_y0, path)
    assert result.iterations == 1
    assert result.ratios == []
    assert result.F.is_zero and result.G.is_zero
    assert result.terminal_norm <= 1e-6


def test_default_weights_cut_the_sources(problem, small_y0):
    """
    Test of the cutoff at M_cost = 5: ||y0 / rho_hat(0)|| lies above 2R and one solve suffices
    """
    path = problem.path(SEED, 1)
    result = problem.solve(small_y0, path)
    assert result.truncation_active(problem.trunc.R)
    assert result.x_norms[0] > 2 * problem.trunc.R
    assert result.iterations == 1
    assert result.F.is_zero and result.G.is_zero
    assert result.terminal_norm <= 1e-6
    assert result.x_norms.shape == (path.n_steps + 1,)
    assert result.F.values.shape == (path.n_steps + 1, 8)


def test_picard_contracts_with_active_sources(contracting, small_y0):
    """
    Test of the Picard iteration with a small cost constant: f_R and g_R act and contract
    """
    grid = contracting.model.grid
    y0 = 0.01 * small_y0 / mode_norms(small_y0, grid.eigenvalues, 1)
    result = contracting.solve(y0, contracting.path(SEED, 1))
    assert result.x_norms[0] < contracting.trunc.R
    assert not result.F.is_zero and not result.G.is_zero
    assert 1 < result.iterations <= 20
    assert len(result.ratios) == result.iterations - 1
    assert all(ratio <= 0.9 for ratio in result.ratios)


def test_with_radius(problem):
    """
    Test of replacing the radius and the nonlinearity of a problem
    """
    assert problem.with_radius(0.25).trunc.R == 0.25
    assert problem.trunc.R == 1.0
    assert problem.linearized().spec.is_linear


def test_estimate_c_and_r():
    """
    Test of C^2 and the smallness radius
    """
    c_hat_sq, R = estimate_c_and_r([2.0, 2.0], [1.0, 1.0], p=2.0)
    assert c_hat_sq == pytest.approx(4.0)
    assert R == pytest.approx(np.sqrt(0.5 / 4.0))
    assert c_hat_sq * R ** (2 * (2.0 - 1)) == pytest.approx(0.5)
    assert estimate_c_and_r([0.0], [1.0], p=3.0) == (0.0, float("inf"))


@pytest.mark.parametrize("x, y", [([], []), ([1.0], [0.0]), ([1.0, 2.0], [1.0])])
def test_estimate_c_and_r_rejects(x, y):
    """
    Test of C^2 on empty or degenerate ensembles
    """
    with pytest.raises(DomainError):
        estimate_c_and_r(x, y, p=2.0)
