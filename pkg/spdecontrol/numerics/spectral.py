"""
Dirichlet sine eigenbasis on D = (0, L).

Functions are represented by their coefficients in the orthonormal basis
phi_k(x) = sqrt(2/L) sin(k pi x / L), k = 1..n_modes, and by their values on
the uniform interior grid x_j = j L / (n_grid + 1), j = 1..n_grid. The pair of
discrete sine transforms between both representations is exact at matched
resolution.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy.fft import dct, dst

from spdecontrol.exceptions import DomainError, NonFiniteError

DEFAULT_LENGTH = 1.0
DEFAULT_MODES = 64
DEFAULT_GRID = 256
DEFAULT_REGION = (0.3, 0.8)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SpectralGrid:
    """
    Spectral discretisation of the interval.

    Attributes:
        length (float): Interval length L.
        n_modes (int): Number of retained sine modes.
        n_grid (int): Number of uniform interior grid points, at least 2 * n_modes.
    """

    length: float = DEFAULT_LENGTH
    n_modes: int = DEFAULT_MODES
    n_grid: int = DEFAULT_GRID

    def __post_init__(self):
        if self.length <= 0:
            raise DomainError(f"interval length must be positive, got {self.length}")
        if self.n_modes < 1:
            raise DomainError(f"n_modes must be positive, got {self.n_modes}")
        if self.n_grid < 2 * self.n_modes:
            raise DomainError(
                f"n_grid={self.n_grid} leaves no dealiasing headroom for n_modes={self.n_modes}"
            )

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return _frozen(np.arange(1, self.n_modes + 1) * np.pi / self.length)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return _frozen(self.wavenumbers**2)

    @cached_property
    def spacing(self) -> float:
        return self.length / (self.n_grid + 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        return _frozen(np.arange(1, self.n_grid + 1) * self.spacing)

    def basis(self, k: int, x: Union[float, np.ndarray]) -> np.ndarray:
        """Evaluate phi_k at the points x."""
        return np.sqrt(2.0 / self.length) * np.sin(k * np.pi * np.asarray(x) / self.length)


@dataclass(frozen=True)
class ModeState:
    """
    Spectral coordinates of the solution at one instant.

    Attributes:
        coefficients (np.ndarray): Sine coefficients y_1..y_n.
        time (float): Time tag in [0, T].
    """

    coefficients: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        coefficients = np.array(self.coefficients, dtype=float)
        if coefficients.ndim != 1:
            raise DomainError("mode state coefficients must be a vector")
        if not np.all(np.isfinite(coefficients)):
            raise NonFiniteError(f"nonfinite mode coefficients at t={self.time}")
        object.__setattr__(self, "coefficients", _frozen(coefficients))

    @classmethod
    def zeros(cls, grid: SpectralGrid, time: float = 0.0) -> "ModeState":
        return cls(np.zeros(grid.n_modes), time)

    def check(self, grid: SpectralGrid) -> None:
        if self.coefficients.shape[0] != grid.n_modes:
            raise DomainError(
                f"state has {self.coefficients.shape[0]} modes, grid has {grid.n_modes}"
            )


@dataclass(frozen=True)
class ControlRegion:
    """
    Control region D_0 = (a0, b0) with 0 <= a0 < b0 <= L.
    """

    a0: float = DEFAULT_REGION[0]
    b0: float = DEFAULT_REGION[1]
    length: float = field(default=DEFAULT_LENGTH)

    def __post_init__(self):
        if not 0 <= self.a0 < self.b0 <= self.length:
            raise DomainError(
                f"control region ({self.a0}, {self.b0}) must lie inside (0, {self.length})"
            )

    def indicator(self, x: Union[float, np.ndarray]) -> np.ndarray:
        x = np.asarray(x)
        return ((x > self.a0) & (x < self.b0)).astype(float)


def eigenvalue(k: int, grid: SpectralGrid) -> float:
    """
    Return the k-th Dirichlet eigenvalue (k pi / L)^2.

    Raises:
        DomainError: If k is outside 1..n_modes.
    """
    if not 1 <= k <= grid.n_modes:
        raise DomainError(f"mode index {k} outside 1..{grid.n_modes}")
    return float(grid.eigenvalues[k - 1])


def synthesize_coefficients(coefficients: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Inverse sine transform along the last axis: coefficients to interior grid values."""
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape[-1] != grid.n_modes:
        raise DomainError(
            f"expected {grid.n_modes} coefficients, got {coefficients.shape[-1]}"
        )
    padded = np.zeros(coefficients.shape[:-1] + (grid.n_grid,))
    padded[..., : grid.n_modes] = coefficients
    return dst(padded, type=1, axis=-1) * (0.5 * np.sqrt(2.0 / grid.length))


def analyze_values(values: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Forward sine transform along the last axis, truncated to the first n_modes."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != grid.n_grid:
        raise DomainError(f"expected {grid.n_grid} grid values, got {values.shape[-1]}")
    scale = 0.5 * grid.spacing * np.sqrt(2.0 / grid.length)
    return dst(values, type=1, axis=-1)[..., : grid.n_modes] * scale


def derivative_values(coefficients: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """
    Spatial derivative on the interior grid by spectral differentiation.

    The derivative of phi_k is the cosine sqrt(2/L) (k pi / L) cos(k pi x / L); the
    cosine series is summed with a type-I DCT over the grid including both endpoints.
    """
    coefficients = np.asarray(coefficients, dtype=float)
    padded = np.zeros(coefficients.shape[:-1] + (grid.n_grid + 2,))
    padded[..., 1 : grid.n_modes + 1] = (
        0.5 * np.sqrt(2.0 / grid.length) * grid.wavenumbers * coefficients
    )
    return dct(padded, type=1, axis=-1)[..., 1:-1]


def synthesize(state: ModeState, grid: SpectralGrid) -> np.ndarray:
    """
    Pointwise values of the state at the interior nodes.

    Boundary values are implicitly zero (Dirichlet).
    """
    state.check(grid)
    return synthesize_coefficients(state.coefficients, grid)


def analyze(values: np.ndarray, grid: SpectralGrid, time: float = 0.0) -> ModeState:
    """Sine coefficients of grid values; modes above n_modes are discarded."""
    return ModeState(analyze_values(values, grid), time)


def mode_norms(coefficients: np.ndarray, eigenvalues: np.ndarray, order: int) -> np.ndarray:
    """Norms (sum_k lambda_k^order y_k^2)^(1/2) along the last axis."""
    if order not in (-1, 0, 1, 2):
        raise DomainError(f"unsupported Sobolev order {order}")
    weights = eigenvalues ** (order / 2.0)
    return np.linalg.norm(np.asarray(coefficients) * weights, axis=-1)


def sobolev_norm(state: ModeState, order: int, grid: SpectralGrid) -> float:
    """
    Spectral Sobolev norm of a state.

    Order 0 is the L2 norm, order 1 the H^1_0 norm (sum lambda_k y_k^2)^(1/2) and
    order 2 the H^2 norm ||Delta y||. Order -1 gives the dual H^-1 norm.
    """
    state.check(grid)
    return float(mode_norms(state.coefficients, grid.eigenvalues, order))


def control_mass_matrix(region: ControlRegion, m: int, length: float = DEFAULT_LENGTH) -> np.ndarray:
    """
    Mass matrix B_kj = integral over D_0 of phi_k phi_j, from closed-form antiderivatives.

    Returns:
        np.ndarray: Symmetric positive semidefinite m x m matrix; the identity when D_0 = (0, L).
    """
    if m < 1:
        raise DomainError(f"mass matrix size must be positive, got {m}")
    k = np.arange(1, m + 1)[:, None]
    j = k.T
    w = np.pi / length
    diff = (k - j).astype(float)
    total = (k + j).astype(float)

    def antiderivative(x: float) -> np.ndarray:
        same = np.full(diff.shape, x)
        cross = np.divide(np.sin(diff * w * x), diff * w, out=same, where=diff != 0)
        return (cross - np.sin(total * w * x) / (total * w)) / length

    mass = antiderivative(region.b0) - antiderivative(region.a0)
    return 0.5 * (mass + mass.T)


def project_low(state: ModeState, mu: float, grid: SpectralGrid) -> ModeState:
    """Orthogonal projection onto the modes with lambda_k <= mu."""
    if mu <= 0:
        raise DomainError(f"spectral cutoff must be positive, got {mu}")
    state.check(grid)
    kept = np.where(grid.eigenvalues <= mu, state.coefficients, 0.0)
    return ModeState(kept, state.time)


def low_mode_count(eigenvalues: np.ndarray, mu: float) -> int:
    """Number of leading modes with eigenvalue at most mu."""
    return int(np.searchsorted(eigenvalues, mu, side="right"))
