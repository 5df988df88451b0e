"""
Source-term method on the geometric block grid T_k = T - T Q^(-k s / 2).

On every block the state splits as y = y1 + y2: y1 starts from zero and
carries the sources, y2 starts from the block's initial state a_k and is
steered to zero at the block end. The block end value of y1 + y2 is the
next block's initial state, so the glued trajectory is continuous.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.integrate import trapezoid

from spdecontrol.exceptions import DomainError, NonFiniteError, UnboundedSourceError
from spdecontrol.numerics.lrcontrol import (
    DEFAULT_K_MAX,
    DEFAULT_M_SPEC,
    ControlSignal,
    build_lr_schedule,
    lr_null_control,
    steer_window,
)
from spdecontrol.numerics.paths import BrownianPath
from spdecontrol.numerics.sde import HeatModel, SourceTerm, Trajectory, solve_linear
from spdecontrol.numerics.spectral import mode_norms
from spdecontrol.numerics.weights import WeightParams, WeightProfile, log_gamma, weight_profile

logger = logging.getLogger(__name__)

STEERING_FLOOR = 1e-12


class SteeringMode(str, Enum):
    DIRECT_HUM = "direct_hum"
    LR = "lr"


def block_nodes(path: BrownianPath, params: WeightParams) -> List[Tuple[int, int]]:
    """
    Blocks [T_k, T_k+1] of the source schedule snapped to path nodes; empty blocks are dropped.

    Raises:
        DomainError: If the path horizon differs from the weight horizon.
    """
    if abs(path.horizon - params.T) > 1e-12 * params.T:
        raise DomainError(f"path horizon {path.horizon} differs from weight horizon {params.T}")
    k_last = int(np.ceil(np.log(2 * params.T / path.dt) / np.log(params.q))) + 1
    times = params.T - params.T * params.q ** -np.arange(k_last + 1, dtype=float)
    nodes = np.unique(np.append(np.rint(times / path.dt).astype(int), path.n_steps))
    return [(int(a), int(b)) for a, b in zip(nodes, nodes[1:])]


def solve_block_free(
    F: Optional[SourceTerm],
    G: Optional[SourceTerm],
    model: HeatModel,
    path: BrownianPath,
    window: Tuple[float, float],
) -> Tuple[Trajectory, np.ndarray]:
    """
    Solve the source-driven part of a block from a zero initial state.

    Returns:
        Tuple[Trajectory, np.ndarray]: The trajectory y1 and its block end value.
    """
    y1 = solve_linear(np.zeros(model.grid.n_modes), model, path, F=F, G=G, window=window)
    return y1, y1.coefficients[-1]


@dataclass(frozen=True)
class BlockControl:
    control: ControlSignal
    trajectory: Trajectory
    residual: float


def control_block(
    a_k: np.ndarray,
    model: HeatModel,
    path: BrownianPath,
    window: Tuple[float, float],
    mode: SteeringMode = SteeringMode.DIRECT_HUM,
    M_spec: float = DEFAULT_M_SPEC,
    k_max: int = DEFAULT_K_MAX,
    index: Optional[int] = None,
) -> BlockControl:
    """
    Steer the block's initial state a_k to zero at the block end without sources.

    direct_hum steers every simulated mode with a single Gramian; lr runs the
    Lebeau-Robbiano windows inside the block.

    Returns:
        BlockControl: Control on the whole path grid (zero outside the block), the
        trajectory y2 and its relative residual at the block end.

    Raises:
        GramianConditioningError: If a Gramian cannot be factorised.
    """
    start, stop = path.node_index(window[0]), path.node_index(window[1])
    if stop <= start:
        raise DomainError(f"empty block {window}")
    a_k = np.asarray(a_k, dtype=float)
    if not np.any(a_k):
        control = ControlSignal.zeros(path.n_steps + 1, model.grid.n_modes, path.dt)
        y2 = solve_linear(a_k, model, path, window=window)
        return BlockControl(control, y2, 0.0)
    if SteeringMode(mode) is SteeringMode.LR:
        schedule = build_lr_schedule(window[1] - window[0], M_spec, k_max, start=window[0])
        result = lr_null_control(a_k, model, path, schedule)
        control, y2 = result.control, result.trajectory
    else:
        coefficients = np.zeros((path.n_steps + 1, model.grid.n_modes))
        block, _ = steer_window(a_k, model, path, start, stop, window=index)
        coefficients[start:stop] = block[:-1]
        control = ControlSignal.build(coefficients, path.dt, model.mass, [(start, stop)])
        y2 = solve_linear(a_k, model, path, control, window=window)
    residual = float(np.linalg.norm(y2.coefficients[-1]) / np.linalg.norm(a_k))
    return BlockControl(control, y2, residual)


@dataclass(frozen=True)
class BlockReport:
    """
    Diagnostics of one block.

    Attributes:
        index (int): Block index k.
        start (float): T_k.
        stop (float): T_k+1.
        a_norm (float): ||a_k||.
        free_norm (float): ||y1(T_k+1)||.
        source_energy (float): Integral of ||F||^2 + ||G||^2 over the block.
        cost (float): Control cost of the block.
        cost_bound (float): gamma(T_k+1 - T_k)^2 ||a_k||^2.
        residual (float): ||y2(T_k+1)|| / ||a_k||.
        steered (bool): Whether a control was computed.
    """

    index: int
    start: float
    stop: float
    a_norm: float
    free_norm: float
    source_energy: float
    cost: float
    cost_bound: float
    residual: float
    steered: bool


class Certificate(BaseModel):
    """
    Weighted quantities of a controlled trajectory on the division window.

    Attributes:
        sup_y_over_rho0_sq (float): sup_t ||y / rho_0||^2.
        sup_y_over_rhohat_h1_sq (float): sup_t ||y / rho_hat||^2 in H^1_0.
        int_y_over_rhohat_h2_sq (float): Integral of ||y / rho_hat||^2 in H^2.
        control_cost_weighted (float): Integral of ||h / rho_0||^2 over (0, T) x D0.
        rhs_bound (float): ||y0||^2 plus the integral of ||F / rho||^2 + ||G / rho||^2.
        k_stop (int): Number of steered blocks.
    """

    sup_y_over_rho0_sq: float
    sup_y_over_rhohat_h1_sq: float
    int_y_over_rhohat_h2_sq: float
    control_cost_weighted: float
    rhs_bound: float
    k_stop: int

    @property
    def ratio(self) -> float:
        """Left side of the weighted sup estimate over its right side."""
        if self.rhs_bound == 0:
            return 0.0
        return (self.sup_y_over_rho0_sq + self.control_cost_weighted) / self.rhs_bound


@dataclass(frozen=True)
class SourceResult:
    control: ControlSignal
    trajectory: Trajectory
    certificate: Certificate
    blocks: List[BlockReport] = field(default_factory=list)
    profile: Optional[WeightProfile] = None

    @property
    def terminal_norm(self) -> float:
        return float(np.linalg.norm(self.trajectory.coefficients[-1]))


def block_cost_bound(length: float, M_cost: float, a_norm: float) -> float:
    """
    gamma(length)^2 ||a_k||^2, formed in the log domain.

    Short blocks push gamma past the float range; the bound is then +inf
    rather than an OverflowError.
    """
    if a_norm == 0:
        return 0.0
    with np.errstate(over="ignore", divide="ignore"):
        return float(np.exp(2 * log_gamma(length, M_cost) + 2 * np.log(a_norm)))


def source_energy(
    F: Optional[SourceTerm], G: Optional[SourceTerm], times: np.ndarray, start: int = 0, stop: Optional[int] = None
) -> float:
    """Trapezoid integral of ||F||^2 + ||G||^2 over the nodes start..stop."""
    stop = times.shape[0] - 1 if stop is None else stop
    density = np.zeros(stop - start + 1)
    for source in (F, G):
        if source is not None:
            density += np.sum(source.values[start : stop + 1] ** 2, axis=1)
    return float(trapezoid(density, times[start : stop + 1])) if stop > start else 0.0


def weighted_source_energy(
    F: Optional[SourceTerm], G: Optional[SourceTerm], profile: WeightProfile
) -> float:
    """
    Integral of ||F / rho||^2 + ||G / rho||^2 over the division window.

    Raises:
        UnboundedSourceError: If the integral is not finite.
    """
    if profile.stop < 2:
        return 0.0
    density = np.zeros(profile.stop)
    for source in (F, G):
        if source is not None:
            density += np.sum(profile.divide(source.values, "rho") ** 2, axis=1)
    energy = float(trapezoid(density, profile.window_times()))
    if not np.isfinite(energy):
        raise UnboundedSourceError("weighted sources are not square integrable on the division window")
    return energy


def certify(
    y0: np.ndarray,
    trajectory: Trajectory,
    control: ControlSignal,
    model: HeatModel,
    profile: WeightProfile,
    source_rhs: float,
    k_stop: int,
) -> Certificate:
    """Weighted norms of the controlled trajectory and the right side of the sup estimate."""
    stop = profile.stop
    eigenvalues = model.grid.eigenvalues
    if stop == 0:
        weighted = np.zeros((0, model.grid.n_modes))
        over_rho_hat = weighted
    else:
        weighted = profile.divide(trajectory.coefficients, "rho0")
        over_rho_hat = profile.divide(trajectory.coefficients, "rho_hat")
    h2 = mode_norms(over_rho_hat, eigenvalues, 2) ** 2
    steps = control.coefficients[: max(stop - 1, 0)]
    step_cost = np.einsum("ni,ij,nj->n", steps, model.mass, steps)
    weighted_cost = float(np.sum(control.dt * step_cost * np.exp(-2 * profile.log_rho0[: steps.shape[0]])))
    certificate = Certificate(
        sup_y_over_rho0_sq=float(np.max(mode_norms(weighted, eigenvalues, 0) ** 2, initial=0.0)),
        sup_y_over_rhohat_h1_sq=float(np.max(mode_norms(over_rho_hat, eigenvalues, 1) ** 2, initial=0.0)),
        int_y_over_rhohat_h2_sq=float(trapezoid(h2, profile.window_times())) if stop > 1 else 0.0,
        control_cost_weighted=weighted_cost,
        rhs_bound=float(np.sum(np.asarray(y0) ** 2) + source_rhs),
        k_stop=k_stop,
    )
    if not all(np.isfinite(v) for v in certificate.model_dump().values()):
        raise NonFiniteError("nonfinite certificate")
    return certificate


def source_term_control(
    y0: np.ndarray,
    F: Optional[SourceTerm],
    G: Optional[SourceTerm],
    model: HeatModel,
    path: BrownianPath,
    params: WeightParams,
    mode: SteeringMode = SteeringMode.DIRECT_HUM,
    M_spec: float = DEFAULT_M_SPEC,
    k_max: int = DEFAULT_K_MAX,
    profile: Optional[WeightProfile] = None,
) -> SourceResult:
    """
    Control driving the system with sources F, G from y0 to zero at T.

    Blocks are steered while ||a_k|| exceeds 1e-12 (||y0|| + source scale); after
    that the state evolves freely under the decaying sources.

    Params:
        y0 (np.ndarray): Initial coefficients.
        F (Optional[SourceTerm]): Drift source on the path nodes.
        G (Optional[SourceTerm]): Diffusion source on the path nodes.
        model (HeatModel): Linear dynamics.
        path (BrownianPath): Driving path on [0, T].
        params (WeightParams): Weight family.
        mode (SteeringMode): Per-block steering.
        M_spec (float): Base cutoff of the lr mode.
        k_max (int): Windows per block of the lr mode.
        profile (Optional[WeightProfile]): Precomputed weights on the path grid.

    Raises:
        UnboundedSourceError: If F / rho or G / rho is not square integrable.
        DomainError: If y0 has no finite H^1_0 norm.
    """
    y0 = np.asarray(y0, dtype=float)
    if not np.isfinite(mode_norms(y0, model.grid.eigenvalues, 1)):
        raise DomainError("initial state must have a finite H^1_0 norm")
    profile = profile or weight_profile(params, path.times)
    source_rhs = weighted_source_energy(F, G, profile)
    scale = float(np.sqrt(source_energy(F, G, path.times)))
    floor = STEERING_FLOOR * (float(np.linalg.norm(y0)) + scale)

    coefficients = np.zeros((path.n_steps + 1, model.grid.n_modes))
    spans: List[Tuple[int, int]] = []
    pieces: List[Trajectory] = []
    reports: List[BlockReport] = []
    cost = 0.0
    a_k = y0
    k_stop = 0
    for k, (start, stop) in enumerate(block_nodes(path, params)):
        window = (float(path.times[start]), float(path.times[stop]))
        y1, free_end = solve_block_free(F, G, model, path, window)
        a_norm = float(np.linalg.norm(a_k))
        steered = a_norm > floor
        if steered:
            block = control_block(a_k, model, path, window, mode, M_spec, k_max, index=k)
            coefficients += block.control.coefficients
            spans.extend(block.control.blocks)
            cost += block.control.cost
            k_stop = k + 1
        else:
            idle = ControlSignal.zeros(path.n_steps + 1, model.grid.n_modes, path.dt)
            block = BlockControl(idle, solve_linear(a_k, model, path, window=window), 0.0)
        piece = y1 + block.trajectory
        pieces.append(piece)
        reports.append(
            BlockReport(
                k,
                window[0],
                window[1],
                a_norm,
                float(np.linalg.norm(free_end)),
                source_energy(F, G, path.times, start, stop),
                block.control.cost if steered else 0.0,
                block_cost_bound(window[1] - window[0], params.M_cost, a_norm),
                block.residual,
                steered,
            )
        )
        logger.debug("block %d: ||a_k||=%.3g residual %.3g", k, a_norm, block.residual)
        a_k = piece.coefficients[-1]
    control = ControlSignal(coefficients, path.dt, tuple(spans), cost)
    trajectory = Trajectory.concatenate(pieces)
    certificate = certify(y0, trajectory, control, model, profile, source_rhs, k_stop)
    return SourceResult(control, trajectory, certificate, reports, profile)
