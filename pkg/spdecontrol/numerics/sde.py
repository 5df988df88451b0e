"""
Pathwise time stepping of the controlled linear stochastic heat equation

    dy = (Delta y + c y + chi_{D0} h + F) dt + (a y + G) dW

in the sine basis, and the exact noise-transform oracle used to verify it.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import TYPE_CHECKING, Callable, Optional, Tuple, Union

import numpy as np

from spdecontrol.exceptions import DomainError, NonFiniteError
from spdecontrol.numerics.paths import BrownianPath, exp_factors
from spdecontrol.numerics.spectral import (
    ControlRegion,
    ModeState,
    SpectralGrid,
    control_mass_matrix,
    mode_norms,
)

if TYPE_CHECKING:
    from spdecontrol.numerics.lrcontrol import ControlSignal

logger = logging.getLogger(__name__)

Window = Tuple[float, float]


@dataclass(frozen=True)
class HeatModel:
    """
    Linear part of the dynamics.

    Attributes:
        grid (SpectralGrid): Spectral discretisation.
        region (ControlRegion): Control region D_0.
        a (float): Multiplicative noise coefficient.
        shift (float): Linear drift c, shifting the decay rates to lambda_k - c.
    """

    grid: SpectralGrid
    region: ControlRegion
    a: float = 0.0
    shift: float = 0.0

    @cached_property
    def rates(self) -> np.ndarray:
        rates = self.grid.eigenvalues - self.shift
        rates.setflags(write=False)
        return rates

    @cached_property
    def mass(self) -> np.ndarray:
        mass = control_mass_matrix(self.region, self.grid.n_modes, self.grid.length)
        mass.setflags(write=False)
        return mass


class SourceKind(str, Enum):
    DRIFT = "F"
    DIFFUSION = "G"


@dataclass(frozen=True)
class SourceTerm:
    """
    Source process sampled at the nodes of a path grid.

    Attributes:
        kind (SourceKind): Drift (F) or diffusion (G).
        values (np.ndarray): Mode coefficients, shape (n_nodes, n_modes).
    """

    kind: SourceKind
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DomainError("source values must have shape (n_nodes, n_modes)")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(f"nonfinite {self.kind.value} source values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, kind: SourceKind, n_nodes: int, n_modes: int) -> "SourceTerm":
        return cls(kind, np.zeros((n_nodes, n_modes)))

    @classmethod
    def from_function(
        cls,
        kind: SourceKind,
        function: Callable[[float], np.ndarray],
        times: np.ndarray,
    ) -> "SourceTerm":
        """Evaluate function(t) -> mode coefficients at every node."""
        return cls(kind, np.stack([np.asarray(function(t), dtype=float) for t in times]))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def __add__(self, other: "SourceTerm") -> "SourceTerm":
        return SourceTerm(self.kind, self.values + other.values)


@dataclass(frozen=True)
class Trajectory:
    """
    Solution sampled at consecutive nodes of a path grid.

    Attributes:
        times (np.ndarray): Strictly increasing node times.
        coefficients (np.ndarray): States aligned to times, shape (n_nodes, n_modes).
        start_index (int): Path-grid index of the first node.
    """

    times: np.ndarray
    coefficients: np.ndarray
    start_index: int = 0

    def __post_init__(self):
        if self.coefficients.shape[0] != self.times.shape[0]:
            raise DomainError("trajectory states are not aligned to its times")
        if self.times.shape[0] > 1 and np.any(np.diff(self.times) <= 0):
            raise DomainError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.shape[0]

    def state(self, i: int) -> ModeState:
        return ModeState(self.coefficients[i], float(self.times[i]))

    @property
    def initial(self) -> ModeState:
        return self.state(0)

    @property
    def terminal(self) -> ModeState:
        return self.state(-1)

    def norms(self, grid: SpectralGrid, order: int = 0) -> np.ndarray:
        return mode_norms(self.coefficients, grid.eigenvalues, order)

    def __add__(self, other: "Trajectory") -> "Trajectory":
        if self.start_index != other.start_index or len(self) != len(other):
            raise DomainError("only trajectories on the same nodes can be superposed")
        return Trajectory(self.times, self.coefficients + other.coefficients, self.start_index)

    def scaled(self, factor: float) -> "Trajectory":
        return Trajectory(self.times, factor * self.coefficients, self.start_index)

    @classmethod
    def concatenate(cls, pieces: "list[Trajectory]") -> "Trajectory":
        """Glue consecutive pieces sharing their boundary nodes."""
        times = [pieces[0].times]
        coefficients = [pieces[0].coefficients]
        for before, piece in zip(pieces, pieces[1:]):
            if piece.start_index != before.start_index + len(before) - 1:
                raise DomainError("trajectory pieces are not consecutive")
            times.append(piece.times[1:])
            coefficients.append(piece.coefficients[1:])
        return cls(np.concatenate(times), np.concatenate(coefficients), pieces[0].start_index)


class ExponentialEuler:
    """
    Exponential Euler step with exact geometric multiplicative factor.

    One step reads

        y <- xi * (exp(-r dt) y + phi1(r, dt) (B q + F)) + G dW,

    with xi = exp(-a^2 dt / 2 + a dW), r = lambda - c and
    phi1(r, dt) = (1 - exp(-r dt)) / r. Sources are taken at the left endpoint.
    """

    def __init__(self, model: HeatModel, dt: float):
        if dt <= 0:
            raise DomainError(f"time step must be positive, got {dt}")
        self.model = model
        self.dt = dt
        rates = model.rates
        self.decay = np.exp(-rates * dt)
        self.phi1 = np.divide(
            -np.expm1(-rates * dt), rates, out=np.full(rates.shape, dt), where=rates != 0
        )

    def noise_factor(self, dw: float) -> float:
        a = self.model.a
        return float(np.exp(-0.5 * a * a * self.dt + a * dw))

    def advance(self, y: np.ndarray, drive: np.ndarray, diffusion: np.ndarray, dw: float) -> np.ndarray:
        """Advance coefficients y by one step given the drift drive B q + F and the source G."""
        return self.noise_factor(dw) * (self.decay * y + self.phi1 * drive) + diffusion * dw


def step_linear(
    state: ModeState,
    h: np.ndarray,
    F: np.ndarray,
    G: np.ndarray,
    dw: float,
    dt: float,
    model: HeatModel,
) -> ModeState:
    """
    Advance a state by one exponential Euler step.

    Params:
        state (ModeState): Current state.
        h (np.ndarray): Control coefficients in the restricted basis chi_{D0} phi_k.
        F (np.ndarray): Drift source coefficients.
        G (np.ndarray): Diffusion source coefficients.
        dw (float): Brownian increment.
        dt (float): Step size.
        model (HeatModel): Linear dynamics.

    Raises:
        NonFiniteError: If any input is not finite.
    """
    inputs = (state.coefficients, h, F, G, np.asarray(dw))
    if not all(np.all(np.isfinite(v)) for v in inputs):
        raise NonFiniteError("nonfinite input to step_linear")
    stepper = ExponentialEuler(model, dt)
    drive = model.mass @ np.asarray(h, dtype=float) + np.asarray(F, dtype=float)
    return ModeState(
        stepper.advance(state.coefficients, drive, np.asarray(G, dtype=float), dw),
        state.time + dt,
    )


def window_indices(path: BrownianPath, window: Optional[Window]) -> Tuple[int, int]:
    """
    Node indices of a time window on the path grid.

    Raises:
        DomainError: If the window is empty or not on the grid.
    """
    if window is None:
        return 0, path.n_steps
    start, stop = path.node_index(window[0]), path.node_index(window[1])
    if stop <= start:
        raise DomainError(f"empty window {window}")
    return start, stop


def _drive(
    model: HeatModel,
    control: Optional["ControlSignal"],
    F: Optional[SourceTerm],
    start: int,
    stop: int,
) -> np.ndarray:
    drive = np.zeros((stop - start, model.grid.n_modes))
    if control is not None:
        drive += control.coefficients[start:stop] @ model.mass
    if F is not None:
        drive += F.values[start:stop]
    return drive


def _initial(y0: Union[ModeState, np.ndarray], model: HeatModel) -> np.ndarray:
    y0 = y0.coefficients if isinstance(y0, ModeState) else np.asarray(y0, dtype=float)
    if y0.shape != (model.grid.n_modes,):
        raise DomainError(f"initial state must have {model.grid.n_modes} modes")
    if not np.all(np.isfinite(y0)):
        raise NonFiniteError("nonfinite initial state")
    return y0


def solve_linear(
    y0: Union[ModeState, np.ndarray],
    model: HeatModel,
    path: BrownianPath,
    control: Optional["ControlSignal"] = None,
    F: Optional[SourceTerm] = None,
    G: Optional[SourceTerm] = None,
    window: Optional[Window] = None,
) -> Trajectory:
    """
    Solve the linear system with control and sources along one path.

    The trajectory is sampled at every node of the window; each step only uses
    path values up to its left endpoint, so the solution is adapted.

    Raises:
        DomainError: If the window is outside the path horizon.
    """
    start, stop = window_indices(path, window)
    stepper = ExponentialEuler(model, path.dt)
    drive = _drive(model, control, F, start, stop)
    diffusion = G.values[start:stop] if G is not None else np.zeros_like(drive)
    coefficients = np.empty((stop - start + 1, model.grid.n_modes))
    coefficients[0] = _initial(y0, model)
    for n in range(stop - start):
        coefficients[n + 1] = stepper.advance(
            coefficients[n], drive[n], diffusion[n], path.increments[start + n]
        )
    return Trajectory(path.times[start : stop + 1], coefficients, start)


def _product_trapezoid_weights(rates: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Weights (w0, w1) with integral_0^dt exp(-r (dt - s)) g(s) ds = w0 g(0) + w1 g(dt)
    for g linear on the step.
    """
    z = rates * dt
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    phi1 = np.where(small, dt * (1 - z / 2 + z * z / 6), -np.expm1(-safe) / safe * dt)
    w0 = np.where(
        small,
        dt * (0.5 - z / 3 + z * z / 8),
        (1.0 - np.exp(-safe) * (1.0 + safe)) / (safe * safe) * dt,
    )
    return w0, phi1 - w0


def oracle_transform_solution(
    y0: Union[ModeState, np.ndarray],
    model: HeatModel,
    path: BrownianPath,
    control: Optional["ControlSignal"] = None,
    F: Optional[SourceTerm] = None,
    G: Optional[SourceTerm] = None,
    window: Optional[Window] = None,
) -> Trajectory:
    """
    Reference solution through the change of variable y = E(t) y~.

    With G = 0 the transformed state solves the deterministic equation
    dy~/dt = -r y~ + E(t)^-1 (B q + F); it is integrated per mode by the
    variation-of-constants formula with product-trapezoid quadrature and mapped back.

    Raises:
        DomainError: If a nonzero diffusion source is supplied.
    """
    if G is not None and not G.is_zero:
        raise DomainError("the transform oracle requires G = 0")
    start, stop = window_indices(path, window)
    factors = exp_factors(path, model.a)[start : stop + 1]
    factors = factors / factors[0]
    drive = _drive(model, control, F, start, stop + 1)
    transformed = drive / factors[:, None]
    w0, w1 = _product_trapezoid_weights(model.rates, path.dt)
    decay = np.exp(-model.rates * path.dt)
    tilde = np.empty((stop - start + 1, model.grid.n_modes))
    tilde[0] = _initial(y0, model)
    for n in range(stop - start):
        tilde[n + 1] = decay * tilde[n] + w0 * transformed[n] + w1 * transformed[n + 1]
    return Trajectory(path.times[start : stop + 1], tilde * factors[:, None], start)


def h_minus_one_norm(coefficients: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Spectral H^-1 norm (sum lambda_k^-1 F_k^2)^(1/2) along the last axis."""
    return mode_norms(coefficients, grid.eigenvalues, -1)
