"""
Monte-Carlo ensembles of the controlled truncated system and the statistical
null-controllability check: estimate C^2, pick R and delta, and compare the
exceedance frequency of ||y||_{X_T} > R with the Markov bound C^2 delta^2 / R^2.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import beta

from spdecontrol.exceptions import DomainError, LabError
from spdecontrol.numerics.paths import INITIAL_DATA_STREAM, generator
from spdecontrol.numerics.semilinear import SemilinearProblem, estimate_c_and_r
from spdecontrol.numerics.spectral import SpectralGrid, mode_norms

logger = logging.getLogger(__name__)

INITIAL_MODES = 8
CONFIDENCE = 0.95


class EnsembleConfig(BaseModel):
    """
    Statistical run parameters.

    Attributes:
        n_paths (int): Number of paths.
        seed (int): Base seed; path i uses the streams keyed by (seed, i).
        delta (float): Initial data scale ||y0||_{H^1_0}.
        R (Optional[float]): Truncation radius; None selects the smallness policy.
        eps (float): Target exceedance probability.
        calibration_paths (int): Paths of the linear-regime calibration ensemble.
        workers (int): Concurrent path workers of the stored runner.
    """

    n_paths: int = Field(100, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    delta: float = Field(0.01, ge=0)
    R: Optional[float] = Field(None, gt=0)
    eps: float = Field(0.05, gt=0, lt=1)
    calibration_paths: int = Field(50, ge=1)
    workers: int = Field(4, ge=1)


class PathRecord(BaseModel):
    """
    Outcome of one path; numeric fields are None when the path failed.

    Attributes:
        path_id (int): Path index within the ensemble.
        seed (int): Base seed of the ensemble.
        y0_h1 (Optional[float]): ||y0||_{H^1_0}.
        x_norm_T (Optional[float]): ||y||_{X_T}.
        terminal_norm (Optional[float]): ||y(T)||_{L^2}.
        cost (Optional[float]): ||h||^2 in L2((0,T) x D0).
        iterations (Optional[int]): Picard iterations.
        truncation_active (Optional[bool]): Whether the X_t norm exceeded R.
        contraction_max (Optional[float]): Largest Picard contraction ratio.
        error (Optional[str]): Failure description.
    """

    path_id: int
    seed: int
    y0_h1: Optional[float] = None
    x_norm_T: Optional[float] = None
    terminal_norm: Optional[float] = None
    cost: Optional[float] = None
    iterations: Optional[int] = None
    truncation_active: Optional[bool] = None
    contraction_max: Optional[float] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


class ProbabilityEstimate(BaseModel):
    p_hat: float
    ci_low: float
    ci_high: float
    n: int
    successes: int


class EnsembleSummary(BaseModel):
    """
    Summary document of a statistical run.

    Attributes:
        n_paths (int): Records summarised, failures included.
        p_hat (float): Fraction of paths with ||y||_{X_T} <= R.
        ci_low (float): Exact lower confidence bound of p_hat.
        ci_high (float): Exact upper confidence bound of p_hat.
        eps_predicted (float): Markov bound C^2 delta^2 / R^2.
        C_hat_sq (float): Empirical constant.
        delta (float): Initial data scale.
        R (float): Truncation radius.
        failures (int): Failed paths.
    """

    n_paths: int
    p_hat: float
    ci_low: float
    ci_high: float
    eps_predicted: float
    C_hat_sq: float
    delta: float
    R: float
    failures: int


def sample_initial_data(
    seed: int, path_index: int, delta: float, grid: SpectralGrid, n_active: int = INITIAL_MODES
) -> np.ndarray:
    """delta times a random unit H^1_0 vector over the first n_active modes, deterministic per path."""
    n_active = min(n_active, grid.n_modes)
    direction = np.zeros(grid.n_modes)
    direction[:n_active] = generator(seed, path_index, INITIAL_DATA_STREAM).standard_normal(n_active)
    return delta * direction / mode_norms(direction, grid.eigenvalues, 1)


def run_path(problem: SemilinearProblem, config: EnsembleConfig, path_index: int) -> PathRecord:
    """Run the Picard pipeline on one path; failures are recorded, not raised."""
    grid = problem.model.grid
    y0 = sample_initial_data(config.seed, path_index, config.delta, grid)
    record = PathRecord(
        path_id=path_index,
        seed=config.seed,
        y0_h1=float(mode_norms(y0, grid.eigenvalues, 1)),
    )
    try:
        result = problem.solve(y0, problem.path(config.seed, path_index))
    except (LabError, ArithmeticError) as exc:
        detail = exc.detail if isinstance(exc, LabError) else str(exc)
        logger.warning("path %d failed: %s", path_index, detail)
        return record.model_copy(update={"error": f"{type(exc).__name__}: {detail}"})
    return record.model_copy(
        update={
            "x_norm_T": float(result.x_norms[-1]),
            "terminal_norm": result.terminal_norm,
            "cost": result.control.cost,
            "iterations": result.iterations,
            "truncation_active": result.truncation_active(problem.trunc.R),
            "contraction_max": result.contraction_max,
        }
    )


def run_ensemble(
    problem: SemilinearProblem,
    config: EnsembleConfig,
    indices: Optional[Iterable[int]] = None,
    progress: Optional[Callable[[PathRecord], None]] = None,
) -> List[PathRecord]:
    """
    One record per path index, sorted by index.

    Params:
        problem (SemilinearProblem): Pipeline, with the truncation radius to use.
        config (EnsembleConfig): Seed, size and initial data scale.
        indices (Optional[Iterable[int]]): Subset of path indices, for resuming.
        progress (Optional[Callable[[PathRecord], None]]): Called after every path.
    """
    indices = range(config.n_paths) if indices is None else sorted(indices)
    records = []
    for index in indices:
        record = run_path(problem, config, index)
        records.append(record)
        if progress is not None:
            progress(record)
    return records


def _successful(records: Sequence[PathRecord]) -> List[PathRecord]:
    return [r for r in records if not r.failed]


def clopper_pearson(successes: int, n: int, confidence: float = CONFIDENCE) -> tuple:
    """Exact two-sided binomial interval."""
    alpha = 1 - confidence
    low = 0.0 if successes == 0 else float(beta.ppf(alpha / 2, successes, n - successes + 1))
    high = 1.0 if successes == n else float(beta.ppf(1 - alpha / 2, successes + 1, n - successes))
    return low, high


def estimate_probability(
    records: Sequence[PathRecord], R: float, confidence: float = CONFIDENCE
) -> ProbabilityEstimate:
    """
    Fraction of successful paths with ||y||_{X_T} <= R and its exact interval.

    Raises:
        DomainError: If no successful record is given.
    """
    usable = _successful(records)
    if not usable:
        raise DomainError("no successful records to estimate a probability from")
    successes = sum(r.x_norm_T <= R for r in usable)
    low, high = clopper_pearson(successes, len(usable), confidence)
    return ProbabilityEstimate(
        p_hat=successes / len(usable), ci_low=low, ci_high=high, n=len(usable), successes=successes
    )


def markov_bound(C_hat_sq: float, delta: float, R: float) -> float:
    """Predicted exceedance probability C^2 delta^2 / R^2."""
    if C_hat_sq < 0 or delta < 0 or R <= 0:
        raise DomainError("markov_bound needs C^2 >= 0, delta >= 0 and R > 0")
    return C_hat_sq * delta**2 / R**2


def calibrate_delta(C_hat_sq: float, R: float, eps: float) -> float:
    """Initial data scale delta = R sqrt(eps / C^2) meeting the Markov bound eps."""
    if C_hat_sq <= 0 or R <= 0 or eps < 0:
        raise DomainError("calibrate_delta needs C^2 > 0, R > 0 and eps >= 0")
    return R * float(np.sqrt(eps / C_hat_sq))


@dataclass(frozen=True)
class Calibration:
    C_hat_sq: float
    R: float
    delta: float
    records: List[PathRecord]
    R_policy: float = float("inf")


def calibrate(problem: SemilinearProblem, config: EnsembleConfig) -> Calibration:
    """
    Estimate C^2 on a linear-regime ensemble, then fix R (config or smallness policy)
    and delta = calibrate_delta(C^2, R, eps).

    Raises:
        DomainError: If every calibration path failed.
    """
    linear = problem.linearized()
    linear_config = config.model_copy(update={"n_paths": config.calibration_paths, "delta": max(config.delta, 1e-3)})
    records = _successful(run_ensemble(linear, linear_config))
    if not records:
        raise DomainError("every calibration path failed")
    C_hat_sq, R_policy = estimate_c_and_r(
        [r.x_norm_T for r in records], [r.y0_h1 for r in records], problem.spec.p
    )
    R = config.R if config.R is not None else R_policy
    delta = calibrate_delta(C_hat_sq, R, config.eps)
    logger.info("calibration: C^2=%.6g R=%.6g delta=%.6g", C_hat_sq, R, delta)
    return Calibration(C_hat_sq, R, delta, records, R_policy)


def summarize(
    records: Sequence[PathRecord], C_hat_sq: float, delta: float, R: float
) -> EnsembleSummary:
    estimate = estimate_probability(records, R)
    return EnsembleSummary(
        n_paths=len(records),
        p_hat=estimate.p_hat,
        ci_low=estimate.ci_low,
        ci_high=estimate.ci_high,
        eps_predicted=markov_bound(C_hat_sq, delta, R),
        C_hat_sq=C_hat_sq,
        delta=delta,
        R=R,
        failures=sum(r.failed for r in records),
    )


def merge_records(first: Sequence[PathRecord], second: Sequence[PathRecord]) -> List[PathRecord]:
    """
    Union of two ensembles over disjoint (seed, path_id) keys.

    Raises:
        DomainError: If a key appears in both.
    """
    keys = {(r.seed, r.path_id) for r in first}
    if any((r.seed, r.path_id) in keys for r in second):
        raise DomainError("ensembles to merge share path keys")
    return sorted([*first, *second], key=lambda r: (r.seed, r.path_id))
