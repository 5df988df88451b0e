from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from spdecontrol.numerics.source_method import Certificate
from spdecontrol.numerics.statlab import EnsembleSummary


class Manifest(BaseModel):
    """
    Model representing the manifest written by every command.

    Attributes:
        command (str): Subcommand name.
        config_hash (str): SHA-256 of the canonical configuration.
        seeds (List[int]): Base seeds the run used.
        artifacts (List[str]): Artifact file names, in writing order.
    """

    command: str
    config_hash: str
    seeds: List[int]
    artifacts: List[str] = Field(default_factory=list)


class SimulationSummary(BaseModel):
    """
    Model representing an uncontrolled run.

    Attributes:
        initial_l2 (float): ||y0||_{L^2}.
        initial_h1 (float): ||y0||_{H^1_0}.
        terminal_l2 (float): ||y(T)||_{L^2}.
        decay_bound (float): exp(-(lambda_1 - c) T) ||y0||, the deterministic decay for a = 0.
        n_steps (int): Time steps.
    """

    initial_l2: float
    initial_h1: float
    terminal_l2: float
    decay_bound: float
    n_steps: int


class WindowOut(BaseModel):
    index: int
    start: float
    stop: float
    cutoff: float
    n_low: int
    cost: float
    residual: float
    condition: float
    regularized: bool


class LinearControlSummary(BaseModel):
    """
    Model representing a Lebeau-Robbiano null control run.

    Attributes:
        initial_l2 (float): ||y0||_{L^2}.
        terminal_l2 (float): ||y(T)||_{L^2}.
        terminal_ratio_sq (float): ||y(T)||^2 / ||y0||^2.
        cost (float): Control cost ||h||^2.
        converged (bool): Whether the terminal tolerance was met.
        windows (List[WindowOut]): Per-window diagnostics.
    """

    initial_l2: float
    terminal_l2: float
    terminal_ratio_sq: float
    cost: float
    converged: bool
    windows: List[WindowOut]


class CostFitOut(BaseModel):
    """
    Model representing the fit log cost = c0 + c1 / T.

    Attributes:
        c0 (float): Intercept.
        c1 (float): Slope in 1/T.
        r2 (float): Coefficient of determination.
        M_cost (float): Constant M with cost <= M exp(M / T).
        horizons (List[float]): Horizons of the sweep.
        n_paths (int): Paths per horizon.
    """

    c0: float
    c1: float
    r2: float
    M_cost: float
    horizons: List[float]
    n_paths: int


class ObservabilityFitOut(BaseModel):
    """
    Model representing the fit log kappa = intercept + slope sqrt(mu).

    Attributes:
        tau (float): Observation horizon.
        slope (float): Slope in sqrt(mu).
        intercept (float): Intercept.
        r2 (float): Coefficient of determination.
        n_cutoffs (int): Number of cutoffs lambda_1..lambda_n.
    """

    tau: float
    slope: float
    intercept: float
    r2: float
    n_cutoffs: int


class SourceDemoSummary(BaseModel):
    """
    Model representing a source-term method run.

    Attributes:
        certificate (Certificate): Weighted norms of the controlled trajectory.
        certificate_ratio (float): Left over right side of the weighted sup estimate.
        terminal_l2 (float): ||y(T)||_{L^2}.
        cost (float): Control cost.
        blocks (int): Blocks on the path grid.
        steered_blocks (int): Blocks that received a control.
        weight_violations (List[str]): Admissibility constraints the weights violate.
        domination (Dict[str, float]): Suprema of the weight ratios.
    """

    certificate: Certificate
    certificate_ratio: float
    terminal_l2: float
    cost: float
    blocks: int
    steered_blocks: int
    weight_violations: List[str]
    domination: Dict[str, float]


class SemilinearSummary(BaseModel):
    """
    Model representing a single-path Picard run of the truncated system.

    Attributes:
        preset (str): Nonlinearity preset.
        R (float): Truncation radius.
        iterations (int): Picard iterations.
        contraction_max (float): Largest contraction ratio.
        ratios (List[float]): Successive contraction ratios.
        x_norm_T (float): ||y||_{X_T}.
        terminal_l2 (float): ||y(T)||_{L^2}.
        truncation_active (bool): Whether the X_t norm exceeded R.
        residual (float): Weighted distance of the last Picard step.
        cost (float): Control cost.
    """

    preset: str
    R: float
    iterations: int
    contraction_max: float
    ratios: List[float]
    x_norm_T: float
    terminal_l2: float
    truncation_active: bool
    residual: float
    cost: float


class EnsembleReport(BaseModel):
    """
    Model representing a statistical run.

    Attributes:
        summary (EnsembleSummary): Probability estimate against the Markov bound.
        R_policy (float): Radius of the smallness policy.
        terminal_max (Optional[float]): Largest ||y(T)|| over the successful paths.
        calibration_paths (int): Paths used to estimate C^2.
    """

    summary: EnsembleSummary
    R_policy: float
    terminal_max: Optional[float]
    calibration_paths: int


class VerifyCheck(BaseModel):
    """
    Model representing one invariant check.

    Attributes:
        name (str): Check name.
        passed (bool): Whether the value meets the threshold.
        value (Optional[float]): Measured quantity.
        threshold (Optional[float]): Bound the value is compared against.
        detail (str): Human readable context.
    """

    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ""


class VerifyReport(BaseModel):
    passed: bool
    checks: List[VerifyCheck]
