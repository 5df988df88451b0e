"""
Reproducible Brownian paths.

Every path is keyed by (seed, path_index): the Philox stream for the increments,
the streams used by bridge refinement and the stream used for sampling initial
data are spawned from one SeedSequence, so ensemble members are independent and
reproducible regardless of the order in which they are computed.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from spdecontrol.exceptions import DomainError

logger = logging.getLogger(__name__)

INCREMENT_STREAM = 0
INITIAL_DATA_STREAM = 1
REFINE_STREAM = 2

GRID_SLACK = 1e-9

_HEADER = np.dtype([("seed", "<u8"), ("dt", "<f8"), ("horizon", "<f8")])


def generator(seed: int, path_index: int = 0, *stream: int) -> np.random.Generator:
    """Counter-based generator for the given (seed, path_index, stream) key."""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(path_index, *stream))
    return np.random.Generator(np.random.Philox(sequence))


@dataclass(frozen=True)
class BrownianPath:
    """
    Discretised Wiener path on the uniform grid t_n = n * dt.

    Attributes:
        seed (int): Base seed of the ensemble.
        dt (float): Step size.
        horizon (float): Final time T.
        increments (np.ndarray): N(0, dt) increments.
        values (np.ndarray): W(t_n), with W(0) = 0.
        path_index (int): Ensemble member index.
        level (int): Number of bridge bisections applied since sampling.
    """

    seed: int
    dt: float
    horizon: float
    increments: np.ndarray
    values: np.ndarray
    path_index: int = 0
    level: int = 0

    def __post_init__(self):
        for name in ("increments", "values"):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @cached_property
    def times(self) -> np.ndarray:
        times = np.arange(self.n_steps + 1) * self.dt
        times.setflags(write=False)
        return times

    def node_index(self, t: float) -> int:
        """
        Index of the grid node at time t.

        Raises:
            DomainError: If t is not a node of the path grid.
        """
        index = int(round(t / self.dt))
        if abs(index * self.dt - t) > GRID_SLACK * max(1.0, self.horizon) or not (
            0 <= index <= self.n_steps
        ):
            raise DomainError(f"t={t} is not a node of the path grid (dt={self.dt})")
        return index


def sample_path(seed: int, dt: float, horizon: float, path_index: int = 0) -> BrownianPath:
    """
    Sample a Brownian path deterministically from (seed, path_index).

    Raises:
        DomainError: If dt or the horizon is nonpositive, or dt does not divide the horizon.
    """
    if dt <= 0 or horizon <= 0:
        raise DomainError(f"dt and horizon must be positive, got dt={dt}, T={horizon}")
    n_steps = int(round(horizon / dt))
    if n_steps < 1 or abs(n_steps * dt - horizon) > GRID_SLACK:
        raise DomainError(f"dt={dt} does not divide the horizon T={horizon}")
    rng = generator(seed, path_index, INCREMENT_STREAM)
    increments = rng.standard_normal(n_steps) * np.sqrt(dt)
    values = np.concatenate(([0.0], np.cumsum(increments)))
    return BrownianPath(seed, dt, horizon, increments, values, path_index)


def refine(path: BrownianPath, factor: int) -> BrownianPath:
    """
    Refine a path by Brownian bridge bisection.

    Each bisection draws the midpoint of every step from the bridge law
    N((W_l + W_r) / 2, dt / 4); the coarse node values are kept exactly.

    Raises:
        DomainError: If factor is not a power of two at least 2.
    """
    if factor < 2 or factor & (factor - 1):
        raise DomainError(f"refinement factor must be a power of two >= 2, got {factor}")
    values = np.array(path.values)
    dt = path.dt
    level = path.level
    for _ in range(factor.bit_length() - 1):
        level += 1
        rng = generator(path.seed, path.path_index, REFINE_STREAM, level)
        midpoints = 0.5 * (values[:-1] + values[1:])
        midpoints += np.sqrt(dt / 4.0) * rng.standard_normal(midpoints.shape[0])
        refined = np.empty(2 * values.shape[0] - 1)
        refined[0::2] = values
        refined[1::2] = midpoints
        values = refined
        dt /= 2.0
    logger.debug("refined path %d by %d to dt=%g", path.path_index, factor, dt)
    return BrownianPath(
        path.seed, dt, path.horizon, np.diff(values), values, path.path_index, level
    )


def exp_factors(path: BrownianPath, a: float) -> np.ndarray:
    """The positive martingale E(t) = exp(a W(t) - a^2 t / 2) at every node."""
    return np.exp(a * path.values - 0.5 * a * a * path.times)


def exp_factor(path: BrownianPath, a: float, t: float) -> float:
    """
    E(t) = exp(a W(t) - a^2 t / 2) at a node of the path.

    Raises:
        DomainError: If t is not on the grid.
    """
    index = path.node_index(t)
    return float(np.exp(a * path.values[index] - 0.5 * a * a * path.times[index]))


def dump_path(path: BrownianPath, target: Union[str, Path, BinaryIO]) -> None:
    """
    Write the replay dump: little-endian header (seed, dt, T) followed by the increments.
    """
    header = np.array([(path.seed, path.dt, path.horizon)], dtype=_HEADER)
    payload = header.tobytes() + path.increments.astype("<f8").tobytes()
    if isinstance(target, (str, Path)):
        Path(target).write_bytes(payload)
    else:
        target.write(payload)


def load_path(source: Union[str, Path, BinaryIO], path_index: int = 0) -> BrownianPath:
    """Read a replay dump written by dump_path."""
    if isinstance(source, (str, Path)):
        payload = Path(source).read_bytes()
    else:
        payload = source.read()
    header = np.frombuffer(payload[: _HEADER.itemsize], dtype=_HEADER)[0]
    increments = np.frombuffer(payload[_HEADER.itemsize :], dtype="<f8").astype(float)
    values = np.concatenate(([0.0], np.cumsum(increments)))
    return BrownianPath(
        int(header["seed"]),
        float(header["dt"]),
        float(header["horizon"]),
        increments,
        values,
        path_index,
    )
