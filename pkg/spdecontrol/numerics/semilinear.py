"""
Truncated nonlinearities and the pathwise Picard fixed point.

The nonlinear sources f(y, y_x) = alpha y^p + beta y^q y_x and g(y) = gamma y^r
are cut off by phi_R applied to the running X_t norm

    ||y||_{X_t} = sup_{s <= t} ||y(s) / rho_hat(s)||_{H^1_0}
                  + (int_0^t ||y(s) / rho_hat(s)||_{H^2}^2 ds)^(1/2),

and the map F -> f_R(y(F)) is iterated through the source-term control.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import cumulative_trapezoid, trapezoid

from spdecontrol.exceptions import DivergenceError, DomainError, NonFiniteError
from spdecontrol.numerics.lrcontrol import DEFAULT_K_MAX, DEFAULT_M_SPEC, ControlSignal
from spdecontrol.numerics.paths import BrownianPath, sample_path
from spdecontrol.numerics.sde import HeatModel, SourceKind, SourceTerm, Trajectory
from spdecontrol.numerics.source_method import SourceResult, SteeringMode, source_term_control
from spdecontrol.numerics.spectral import (
    SpectralGrid,
    analyze_values,
    derivative_values,
    mode_norms,
    synthesize_coefficients,
)
from spdecontrol.numerics.weights import WeightParams, WeightProfile, weight_profile

logger = logging.getLogger(__name__)

DIVERGENCE_STREAK = 3
DEFAULT_MAX_ITER = 20
DEFAULT_TOL = 1e-6


class NonlinearitySpec(BaseModel):
    """
    Coefficients of f(y, y_x) = alpha y^p + beta y^q y_x and g(y) = gamma y^r.

    Attributes:
        alpha (float): Coefficient of the power term.
        beta (float): Coefficient of the transport term.
        gamma_coef (float): Coefficient of the diffusion source.
        p (float): Power of the reaction term, above 1.
        q (float): Power of the transport term, at least 1.
        r (float): Power of the diffusion source, above 1.
        drift_shift (float): Linear drift c added as + c y.
        dimension (int): Spatial dimension, always 1 here.
    """

    model_config = ConfigDict(frozen=True)

    alpha: float = 0.0
    beta: float = 0.0
    gamma_coef: float = 0.0
    p: float = Field(2.0, gt=1)
    q: float = Field(1.0, ge=1)
    r: float = Field(2.0, gt=1)
    drift_shift: float = 0.0
    dimension: int = Field(1, ge=1, le=1)

    @property
    def s(self) -> float:
        return min(self.p, self.q + 1, self.r)

    @property
    def is_linear(self) -> bool:
        return self.alpha == 0 and self.beta == 0 and self.gamma_coef == 0

    @classmethod
    def preset(cls, name: str, **overrides) -> "NonlinearitySpec":
        """
        Build a named preset with optional coefficient overrides.

        Raises:
            DomainError: If the preset is unknown.
        """
        if name not in PRESETS:
            raise DomainError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})


PRESETS: Dict[str, Dict[str, float]] = {
    "burgers": {"alpha": 0.0, "beta": -1.0, "gamma_coef": 0.1, "p": 2.0, "q": 1.0, "r": 2.0},
    "allen-cahn": {
        "alpha": -1.0,
        "beta": 0.0,
        "gamma_coef": 0.0,
        "p": 3.0,
        "q": 1.0,
        "r": 2.0,
        "drift_shift": 1.0,
    },
    "linear": {"alpha": 0.0, "beta": 0.0, "gamma_coef": 0.0, "p": 2.0, "q": 1.0, "r": 2.0},
}


@dataclass(frozen=True)
class TruncationParams:
    """
    Smoothstep cutoff phi_R: 1 below R, 0 above 2R, 1 - (3u^2 - 2u^3) with u = (s - R) / R between.
    """

    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise DomainError(f"truncation radius must be positive, got {self.R}")

    def phi(self, s):
        u = np.clip((np.asarray(s, dtype=float) - self.R) / self.R, 0.0, 1.0)
        return 1.0 - u * u * (3.0 - 2.0 * u)

    @property
    def max_slope(self) -> float:
        return 1.5 / self.R


def _power(values: np.ndarray, exponent: float) -> np.ndarray:
    if float(exponent).is_integer():
        return values ** int(exponent)
    return np.sign(values) * np.abs(values) ** exponent


def _dealias(coefficients: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    coefficients[..., (2 * grid.n_modes) // 3 :] = 0.0
    return coefficients


def eval_f(coefficients: np.ndarray, spec: NonlinearitySpec, grid: SpectralGrid) -> np.ndarray:
    """
    Pseudospectral f(y, y_x) along the last axis, with the top third of the modes removed.

    Raises:
        NonFiniteError: If the pointwise values are not finite.
    """
    coefficients = np.asarray(coefficients, dtype=float)
    if spec.alpha == 0 and spec.beta == 0:
        return np.zeros_like(coefficients)
    y = synthesize_coefficients(coefficients, grid)
    values = np.zeros_like(y)
    if spec.alpha:
        values += spec.alpha * _power(y, spec.p)
    if spec.beta:
        values += spec.beta * _power(y, spec.q) * derivative_values(coefficients, grid)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("nonfinite values of f")
    return _dealias(analyze_values(values, grid), grid)


def eval_g(coefficients: np.ndarray, spec: NonlinearitySpec, grid: SpectralGrid) -> np.ndarray:
    """Pseudospectral g(y) = gamma y^r along the last axis."""
    coefficients = np.asarray(coefficients, dtype=float)
    if spec.gamma_coef == 0:
        return np.zeros_like(coefficients)
    values = spec.gamma_coef * _power(synthesize_coefficients(coefficients, grid), spec.r)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("nonfinite values of g")
    return _dealias(analyze_values(values, grid), grid)


def _aligned(trajectory: Trajectory, profile: WeightProfile) -> int:
    stop = min(profile.stop - trajectory.start_index, len(trajectory))
    return max(stop, 0)


def running_x_norm(trajectory: Trajectory, profile: WeightProfile, grid: SpectralGrid) -> np.ndarray:
    """
    X_t norm at every node of the trajectory.

    Nodes past the division window keep the last value reached inside it, so the
    value at t only uses the trajectory up to t.
    """
    stop = _aligned(trajectory, profile)
    norms = np.zeros(len(trajectory))
    if stop == 0:
        return norms
    offset = trajectory.start_index
    weighted = trajectory.coefficients[:stop] * np.exp(
        -profile.log_rho_hat[offset : offset + stop]
    )[:, None]
    h1 = mode_norms(weighted, grid.eigenvalues, 1)
    h2_sq = mode_norms(weighted, grid.eigenvalues, 2) ** 2
    running = np.maximum.accumulate(h1) + np.sqrt(
        cumulative_trapezoid(h2_sq, trajectory.times[:stop], initial=0.0)
    )
    norms[:stop] = running
    norms[stop:] = running[-1]
    return norms


def x_norm(trajectory: Trajectory, profile: WeightProfile, grid: SpectralGrid, t: float) -> float:
    """X_t norm of the trajectory at a node time t."""
    index = int(np.argmin(np.abs(trajectory.times - t)))
    if abs(trajectory.times[index] - t) > 1e-9 * max(1.0, abs(t)):
        raise DomainError(f"t={t} is not a node of the trajectory")
    return float(running_x_norm(trajectory, profile, grid)[index])


def truncated_sources(
    trajectory: Trajectory,
    t: float,
    spec: NonlinearitySpec,
    trunc: TruncationParams,
    profile: WeightProfile,
    grid: SpectralGrid,
) -> Tuple[np.ndarray, np.ndarray]:
    """f_R and g_R of the trajectory at a node time t."""
    index = int(np.argmin(np.abs(trajectory.times - t)))
    factor = float(trunc.phi(x_norm(trajectory, profile, grid, t)))
    if factor == 0:
        zeros = np.zeros(grid.n_modes)
        return zeros, zeros.copy()
    y = trajectory.coefficients[index]
    return factor * eval_f(y, spec, grid), factor * eval_g(y, spec, grid)


def truncated_source_terms(
    trajectory: Trajectory,
    spec: NonlinearitySpec,
    trunc: TruncationParams,
    profile: WeightProfile,
    grid: SpectralGrid,
) -> Tuple[SourceTerm, SourceTerm, np.ndarray]:
    """
    f_R(y) and g_R(y) at every node, with the running X_t norms they were cut off with.
    """
    norms = running_x_norm(trajectory, profile, grid)
    factors = trunc.phi(norms)
    F = np.zeros_like(trajectory.coefficients)
    G = np.zeros_like(trajectory.coefficients)
    active = factors > 0
    if np.any(active) and not spec.is_linear:
        states = trajectory.coefficients[active]
        F[active] = factors[active, None] * eval_f(states, spec, grid)
        G[active] = factors[active, None] * eval_g(states, spec, grid)
    return SourceTerm(SourceKind.DRIFT, F), SourceTerm(SourceKind.DIFFUSION, G), norms


def weighted_distance(
    F: np.ndarray, G: np.ndarray, profile: WeightProfile, grid: SpectralGrid
) -> float:
    """(int ||F / rho||^2 + int ||G / rho||_{H^1}^2)^(1/2) over the division window."""
    if profile.stop < 2:
        return 0.0
    density = mode_norms(profile.divide(F, "rho"), grid.eigenvalues, 0) ** 2
    density += mode_norms(profile.divide(G, "rho"), grid.eigenvalues, 1) ** 2
    return float(np.sqrt(trapezoid(density, profile.window_times())))


@dataclass(frozen=True)
class PicardResult:
    """
    Outcome of the Picard iteration on one path.

    Attributes:
        F (SourceTerm): Drift source the returned trajectory was computed with.
        G (SourceTerm): Diffusion source the returned trajectory was computed with.
        trajectory (Trajectory): Controlled trajectory of the truncated system.
        control (ControlSignal): Its control.
        iterations (int): Number of controlled solves.
        ratios (List[float]): Successive contraction ratios d_m / d_(m-1).
        x_norms (np.ndarray): Running X_t norm of the trajectory.
        source (SourceResult): Last source-term control result.
        residual (float): Weighted distance between the returned sources and f_R, g_R of the trajectory.
    """

    F: SourceTerm
    G: SourceTerm
    trajectory: Trajectory
    control: ControlSignal
    iterations: int
    ratios: List[float]
    x_norms: np.ndarray
    source: SourceResult
    residual: float = 0.0

    @property
    def contraction_max(self) -> float:
        return max(self.ratios, default=0.0)

    @property
    def terminal_norm(self) -> float:
        return float(np.linalg.norm(self.trajectory.coefficients[-1]))

    def truncation_active(self, R: float) -> bool:
        return bool(np.any(self.x_norms > R))


def picard_iterate(
    y0: np.ndarray,
    model: HeatModel,
    path: BrownianPath,
    spec: NonlinearitySpec,
    trunc: TruncationParams,
    params: WeightParams,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    mode: SteeringMode = SteeringMode.DIRECT_HUM,
    M_spec: float = DEFAULT_M_SPEC,
    k_max: int = DEFAULT_K_MAX,
) -> PicardResult:
    """
    Iterate F_(m+1) = f_R(y_m), G_(m+1) = g_R(y_m) with y_m the controlled
    trajectory for the sources (F_m, G_m), starting from zero sources.

    The iteration stops once the weighted distance between consecutive sources is
    at most tol times their weighted size, and returns y_m with the sources it was
    computed with.

    Raises:
        DivergenceError: If the contraction ratio stays at or above 1 for three
            consecutive steps, or max_iter steps do not converge.
    """
    grid = model.grid
    profile = weight_profile(params, path.times)
    n_nodes = path.n_steps + 1
    F = SourceTerm.zeros(SourceKind.DRIFT, n_nodes, grid.n_modes)
    G = SourceTerm.zeros(SourceKind.DIFFUSION, n_nodes, grid.n_modes)
    ratios: List[float] = []
    previous: Optional[float] = None
    streak = 0
    for iteration in range(1, max_iter + 1):
        result = source_term_control(y0, F, G, model, path, params, mode, M_spec, k_max, profile)
        F_next, G_next, norms = truncated_source_terms(result.trajectory, spec, trunc, profile, grid)
        distance = weighted_distance(
            F_next.values - F.values, G_next.values - G.values, profile, grid
        )
        size = max(
            weighted_distance(F_next.values, G_next.values, profile, grid),
            weighted_distance(F.values, G.values, profile, grid),
        )
        if previous is not None and previous > 0:
            ratios.append(distance / previous)
            streak = streak + 1 if ratios[-1] >= 1 else 0
        logger.debug("picard step %d: distance %.3g (size %.3g)", iteration, distance, size)
        if distance == 0 or distance <= tol * size:
            return PicardResult(
                F, G, result.trajectory, result.control, iteration, ratios, norms, result, distance
            )
        if streak >= DIVERGENCE_STREAK:
            raise DivergenceError(
                f"Picard iteration does not contract (ratios {ratios[-3:]}); try a smaller R",
                ratios,
            )
        previous = distance
        F, G = F_next, G_next
    raise DivergenceError(f"Picard iteration did not converge in {max_iter} steps", ratios)


def lipschitz_probe(
    y1: Trajectory,
    y2: Trajectory,
    t: float,
    spec: NonlinearitySpec,
    trunc: TruncationParams,
    profile: WeightProfile,
    grid: SpectralGrid,
    source: SourceKind = SourceKind.DRIFT,
) -> float:
    """
    Empirical Lipschitz ratio of the truncated source at a node time t:

        ||(f_R(y1) - f_R(y2)) / rho|| / ((R^(p-1) + R^q + R^(r-1)) (||y1 - y2||_{X_t} + ||(y1 - y2) / rho_hat||_{H^2}))

    The diffusion source is measured in H^1. Identical inputs give 0.

    Raises:
        DomainError: If the trajectories do not share their nodes or t is past the division window.
    """
    if y1.start_index != y2.start_index or not np.array_equal(y1.times, y2.times):
        raise DomainError("compared trajectories must share their nodes")
    index = int(np.argmin(np.abs(y1.times - t)))
    node = y1.start_index + index
    if node >= profile.stop:
        raise DomainError(f"t={t} lies past the division window")
    difference = Trajectory(y1.times, y1.coefficients - y2.coefficients, y1.start_index)
    weighted = difference.coefficients[index] * np.exp(-profile.log_rho_hat[node])
    denominator = x_norm(difference, profile, grid, t) + float(
        mode_norms(weighted, grid.eigenvalues, 2)
    )
    if denominator == 0:
        return 0.0
    first = truncated_sources(y1, t, spec, trunc, profile, grid)
    second = truncated_sources(y2, t, spec, trunc, profile, grid)
    slot, order = (0, 0) if source is SourceKind.DRIFT else (1, 1)
    gap = (first[slot] - second[slot]) * np.exp(-profile.log_rho[node])
    R = trunc.R
    scale = R ** (spec.p - 1) + R**spec.q + R ** (spec.r - 1)
    return float(mode_norms(gap, grid.eigenvalues, order)) / (scale * denominator)


def estimate_c_and_r(
    x_norms: Sequence[float], y0_norms: Sequence[float], p: float, safety: float = 0.5
) -> Tuple[float, float]:
    """
    Empirical constant C^2 = E ||y||_{X_T}^2 / E ||y0||_{H^1_0}^2 and the radius
    R = (safety / C^2)^(1 / (2 (p - 1))) making C^2 R^(2(p-1)) = safety.

    Raises:
        DomainError: If the ensemble is empty or degenerate.
    """
    x_norms = np.asarray(x_norms, dtype=float)
    y0_norms = np.asarray(y0_norms, dtype=float)
    if x_norms.size == 0 or x_norms.shape != y0_norms.shape:
        raise DomainError("estimating C needs a nonempty linear-regime ensemble")
    denominator = float(np.mean(y0_norms**2))
    if denominator == 0:
        raise DomainError("all initial data vanish, C cannot be estimated")
    c_hat_sq = float(np.mean(x_norms**2)) / denominator
    if c_hat_sq == 0:
        return 0.0, float("inf")
    return c_hat_sq, float((safety / c_hat_sq) ** (1.0 / (2.0 * (p - 1.0))))


@dataclass(frozen=True)
class SemilinearProblem:
    """
    Everything needed to run the controlled truncated system on one path.

    Attributes:
        model (HeatModel): Linear dynamics, including the drift shift of the nonlinearity.
        spec (NonlinearitySpec): Nonlinear sources.
        trunc (TruncationParams): Cutoff radius.
        weights (WeightParams): Weight family; its T is the horizon.
        dt (float): Path step.
        mode (SteeringMode): Per-block steering.
        M_spec (float): Base cutoff of the lr mode.
        k_max (int): Windows per block of the lr mode.
        max_iter (int): Picard iteration cap.
        tol (float): Picard relative tolerance.
    """

    model: HeatModel
    spec: NonlinearitySpec
    trunc: TruncationParams
    weights: WeightParams
    dt: float
    mode: SteeringMode = SteeringMode.DIRECT_HUM
    M_spec: float = DEFAULT_M_SPEC
    k_max: int = DEFAULT_K_MAX
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL

    def path(self, seed: int, path_index: int = 0) -> BrownianPath:
        return sample_path(seed, self.dt, self.weights.T, path_index)

    def solve(self, y0: np.ndarray, path: BrownianPath) -> PicardResult:
        return picard_iterate(
            y0,
            self.model,
            path,
            self.spec,
            self.trunc,
            self.weights,
            self.max_iter,
            self.tol,
            self.mode,
            self.M_spec,
            self.k_max,
        )

    def with_radius(self, R: float) -> "SemilinearProblem":
        return replace(self, trunc=TruncationParams(R))

    def linearized(self) -> "SemilinearProblem":
        return replace(self, spec=self.spec.model_copy(update={"alpha": 0.0, "beta": 0.0, "gamma_coef": 0.0}))
