"""
Time weights of the source-term method.

With q = Q^(s/2):

    gamma(t)   = M exp(M / t)
    rho_0(t)   = M^-P exp(-M P / ((q - 1)(T - t)))
    rho(t)     = M^-(1+P) exp(-(1 + P) Q^s M / ((q - 1)(T - t)))
    rho_hat(t) = exp(-M zeta / ((q - 1)(T - t)))

All weights are evaluated in the log domain; the plain versions clamp values
below 1e-300 to exactly zero.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from spdecontrol.exceptions import DomainError

logger = logging.getLogger(__name__)

UNDERFLOW = 1e-300
DIVISION_FLOOR = 1e-150
GUARD_DIVISOR = 1024

Times = Union[float, np.ndarray]


class WeightParams(BaseModel):
    """
    Parameters of the weight family.

    Attributes:
        s (float): Exponent min(p, q + 1, r) of the nonlinearity.
        Q (float): Geometric ratio of the block schedule, in (1, 2^(1/s)).
        P (float): Exponent of rho_0, above Q^s / (2 - Q^s).
        zeta (float): Exponent of rho_hat, in ((1 + P) Q^s / 2, P).
        M_cost (float): Control cost constant M with C_T <= M exp(M / T).
        T (float): Horizon.
    """

    model_config = ConfigDict(frozen=True)

    s: float = Field(2.0, gt=1)
    Q: float = 1.2
    P: float = 3.0
    zeta: float = 2.9
    M_cost: float = Field(5.0, gt=0)
    T: float = Field(1.0, gt=0)

    @property
    def q(self) -> float:
        return self.Q ** (self.s / 2)

    @property
    def scale(self) -> float:
        """M / (q - 1), the common factor of the exponents."""
        if self.q <= 1:
            raise DomainError(f"Q^(s/2) must exceed 1, got {self.q}")
        return self.M_cost / (self.q - 1)


def validate(params: WeightParams) -> List[str]:
    """
    Check the admissibility constraints of the weight parameters.

    Returns:
        List[str]: One message per violated constraint; empty when admissible.
    """
    violations = []
    Qs = params.Q**params.s
    if not 1 < params.Q < 2 ** (1 / params.s):
        violations.append(f"Q={params.Q} outside (1, 2^(1/s)={2 ** (1 / params.s):.6g})")
    if Qs >= 2 or params.P <= Qs / (2 - Qs):
        bound = Qs / (2 - Qs) if Qs < 2 else float("inf")
        violations.append(f"P={params.P} not above Q^s/(2-Q^s)={bound:.6g}")
    low = (1 + params.P) * Qs / 2
    if not low < params.zeta < params.P:
        violations.append(f"zeta={params.zeta} outside ((1+P)Q^s/2={low:.6g}, P={params.P})")
    return violations


def _remaining(t: Times, params: WeightParams) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > params.T):
        raise DomainError(f"weights are defined on [0, {params.T}]")
    return params.T - t


def _exponent(coefficient: float, remaining: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(remaining > 0, -coefficient / np.where(remaining > 0, remaining, 1.0), -np.inf)


def log_gamma(t: Times, M_cost: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("gamma is defined for t > 0")
    with np.errstate(divide="ignore"):
        return np.log(M_cost) + M_cost / t


def log_rho0(t: Times, params: WeightParams) -> np.ndarray:
    remaining = _remaining(t, params)
    return -params.P * np.log(params.M_cost) + _exponent(params.scale * params.P, remaining)


def log_rho(t: Times, params: WeightParams) -> np.ndarray:
    remaining = _remaining(t, params)
    coefficient = params.scale * (1 + params.P) * params.Q**params.s
    return -(1 + params.P) * np.log(params.M_cost) + _exponent(coefficient, remaining)


def log_rho_hat(t: Times, params: WeightParams) -> np.ndarray:
    return _exponent(params.scale * params.zeta, _remaining(t, params))


def _clamped(log_value: np.ndarray) -> Union[float, np.ndarray]:
    value = np.exp(log_value)
    value = np.where(value < UNDERFLOW, 0.0, value)
    return float(value) if value.ndim == 0 else value


def gamma(t: Times, M_cost: float) -> Union[float, np.ndarray]:
    """gamma(t) = M exp(M / t); infinite at t = 0."""
    with np.errstate(over="ignore"):
        value = np.exp(log_gamma(t, M_cost))
    return float(value) if value.ndim == 0 else value


def rho0(t: Times, params: WeightParams) -> Union[float, np.ndarray]:
    return _clamped(log_rho0(t, params))


def rho(t: Times, params: WeightParams) -> Union[float, np.ndarray]:
    return _clamped(log_rho(t, params))


def rho_hat(t: Times, params: WeightParams) -> Union[float, np.ndarray]:
    return _clamped(log_rho_hat(t, params))


def source_schedule(T: float, Q: float, s: float, k_max: int) -> np.ndarray:
    """
    Block times T_k = T - T Q^(-k s / 2), k = 0..k_max.

    Raises:
        DomainError: If Q^(s/2) <= 1 or k_max < 1.
    """
    q = Q ** (s / 2)
    if q <= 1:
        raise DomainError(f"Q^(s/2) must exceed 1, got {q}")
    if k_max < 1:
        raise DomainError(f"k_max must be at least 1, got {k_max}")
    return T - T * q ** -np.arange(k_max + 1, dtype=float)


@dataclass(frozen=True)
class WeightProfile:
    """
    Weights on a time grid, with the window where dividing by them is safe.

    Attributes:
        times (np.ndarray): Grid times.
        log_rho0 (np.ndarray): log rho_0 at the grid times.
        log_rho (np.ndarray): log rho at the grid times.
        log_rho_hat (np.ndarray): log rho_hat at the grid times.
        stop (int): Number of leading nodes with t <= T - T / guard and every weight >= 1e-150.
    """

    times: np.ndarray
    log_rho0: np.ndarray
    log_rho: np.ndarray
    log_rho_hat: np.ndarray
    stop: int

    def divide(self, values: np.ndarray, weight: str) -> np.ndarray:
        """Divide node values (first axis aligned to times) by a weight on the division window."""
        logs = {"rho0": self.log_rho0, "rho": self.log_rho, "rho_hat": self.log_rho_hat}[weight]
        values = np.asarray(values, dtype=float)[: self.stop]
        factor = np.exp(-logs[: self.stop])
        return values * factor.reshape((-1,) + (1,) * (values.ndim - 1))

    def window_times(self) -> np.ndarray:
        return self.times[: self.stop]


def weight_profile(
    params: WeightParams,
    times: np.ndarray,
    guard_divisor: int = GUARD_DIVISOR,
    floor: float = DIVISION_FLOOR,
) -> WeightProfile:
    """Evaluate the weights on a grid of [0, T] and locate the division window."""
    times = np.asarray(times, dtype=float)
    logs = [log_rho0(times, params), log_rho(times, params), log_rho_hat(times, params)]
    admissible = times <= params.T - params.T / guard_divisor
    for log_w in logs:
        admissible &= log_w >= np.log(floor)
    stop = int(np.argmin(admissible)) if not np.all(admissible) else times.shape[0]
    logger.debug("division window ends at t=%g", times[stop - 1] if stop else 0.0)
    return WeightProfile(times, *logs, stop)


def domination_ratios(params: WeightParams, n_points: int = 10_000, gap: float = 1e-6) -> Dict[str, float]:
    """
    Suprema over a grid of [0, T - gap] of rho_0 / rho_hat, rho / rho_hat,
    |rho_hat'| rho_0 / rho_hat^2 and rho_hat^s / rho.

    The third ratio is bounded only when zeta < P / 2, which the admissible
    zeta window excludes; its supremum then grows without bound as gap -> 0.
    """
    t = np.linspace(0.0, params.T - gap, n_points)
    lr0, lr, lrh = log_rho0(t, params), log_rho(t, params), log_rho_hat(t, params)
    derivative = np.log(params.scale * params.zeta) - 2 * np.log(params.T - t)
    logs = {
        "rho0_over_rho_hat": lr0 - lrh,
        "rho_over_rho_hat": lr - lrh,
        "derivative_rho0_over_rho_hat_sq": derivative + lr0 - 2 * lrh,
        "rho_hat_pow_s_over_rho": params.s * lrh - lr,
    }
    with np.errstate(over="ignore"):
        return {name: float(np.exp(np.max(values))) for name, values in logs.items()}
