import configparser
import hashlib
import json
import os
from pathlib import Path
from typing import List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from spdecontrol.exceptions import ConfigError
from spdecontrol.numerics.lrcontrol import build_lr_schedule, LRSchedule
from spdecontrol.numerics.sde import HeatModel
from spdecontrol.numerics.semilinear import (
    NonlinearitySpec,
    SemilinearProblem,
    TruncationParams,
)
from spdecontrol.numerics.source_method import SteeringMode
from spdecontrol.numerics.spectral import ControlRegion, SpectralGrid
from spdecontrol.numerics.statlab import EnsembleConfig
from spdecontrol.numerics.weights import WeightParams

load_dotenv()

LOG_LEVEL: str = os.environ.get("SPDECONTROL_LOG_LEVEL", "INFO")
DB_ECHO: bool = os.environ.get("DB_ECHO", "0").lower() in {"1", "true", "yes"}


def get_database_url(out_dir: Union[str, Path] = ".") -> str:
    """
    Database URL of the ensemble record store.

    Args:
        out_dir (Union[str, Path]): Output directory holding the default SQLite file.

    Returns:
        str: DATABASE_URL_TEST when ENV is "test", otherwise DATABASE_URL, falling
        back to an aiosqlite file in the output directory.
    """
    if os.environ.get("ENV") == "test":
        url = os.environ.get("DATABASE_URL_TEST")
    else:
        url = os.environ.get("DATABASE_URL")
    return url or f"sqlite+aiosqlite:///{Path(out_dir) / 'ensemble.db'}"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainSection(Section):
    length: float = Field(1.0, gt=0, description="Interval length L")
    n_modes: int = Field(64, ge=1, description="Retained sine modes")
    n_grid: int = Field(256, ge=2, description="Interior grid points, at least 2 n_modes")
    control_a0: float = Field(0.3, ge=0, description="Left end of the control region")
    control_b0: float = Field(0.8, gt=0, description="Right end of the control region")
    horizon: float = Field(1.0, gt=0, description="Final time T")
    steps: int = Field(2048, ge=1, description="Time steps on [0, T]; dt = T / steps")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps


class NoiseSection(Section):
    a: float = Field(0.5, description="Multiplicative noise coefficient")
    seed: int = Field(0, ge=0, lt=2**64, description="Base seed")


class NonlinearitySection(Section):
    preset: Literal["burgers", "allen-cahn", "linear"] = Field("burgers", description="Nonlinearity preset")
    alpha: Optional[float] = Field(None, description="Override of alpha")
    beta: Optional[float] = Field(None, description="Override of beta")
    gamma: Optional[float] = Field(None, description="Override of gamma")
    p: Optional[float] = Field(None, description="Override of p")
    q: Optional[float] = Field(None, description="Override of q")
    r: Optional[float] = Field(None, description="Override of r")
    drift_shift: Optional[float] = Field(None, description="Override of the linear drift")
    max_iter: int = Field(20, ge=1, description="Picard iteration cap")
    tol: float = Field(1e-6, gt=0, description="Picard relative tolerance")


class WeightsSection(Section):
    Q: float = Field(1.2, description="Geometric ratio of the block schedule")
    P: float = Field(3.0, description="Exponent of rho_0")
    zeta: float = Field(2.9, description="Exponent of rho_hat")
    M_cost: float = Field(5.0, gt=0, description="Control cost constant")
    s: Optional[float] = Field(None, gt=1, description="Defaults to min(p, q + 1, r)")
    guard_divisor: int = Field(1024, ge=2, description="Division window ends at T - T / guard_divisor")


class LRSection(Section):
    M_spec: float = Field(10.0, gt=0, description="Base spectral cutoff")
    k_max: int = Field(6, ge=1, description="Last window index")
    steering: Literal["direct_hum", "lr"] = Field("direct_hum", description="Per-block steering")
    terminal_tol: float = Field(1e-3, gt=0, description="Relative terminal tolerance")
    cost_horizons: List[float] = Field([0.25, 0.5, 1.0], min_length=3, description="Cost curve horizons")
    cost_paths: int = Field(20, ge=1, description="Paths per cost curve horizon")
    obs_tau: float = Field(0.25, gt=0, description="Observability horizon")
    obs_cutoffs: int = Field(8, ge=2, description="Observability cutoffs lambda_1..lambda_n")

    @field_validator("cost_horizons", mode="before")
    @classmethod
    def split_horizons(cls, value):
        if isinstance(value, str):
            return [float(part) for part in value.split(",") if part.strip()]
        return value


class EnsembleSection(Section):
    n_paths: int = Field(100, ge=1, description="Ensemble size")
    delta: float = Field(0.01, ge=0, description="Initial data scale")
    R: Optional[float] = Field(None, gt=0, description="Truncation radius, default smallness policy")
    eps: float = Field(0.05, gt=0, lt=1, description="Target exceedance probability")
    calibration_paths: int = Field(50, ge=1, description="Linear-regime calibration paths")
    workers: int = Field(4, ge=1, description="Concurrent path workers")


class RunConfig(Section):
    """
    Validated run configuration.

    Attributes:
        domain (DomainSection): Grid, control region and time grid.
        noise (NoiseSection): Noise coefficient and base seed.
        nonlinearity (NonlinearitySection): Preset, overrides and Picard settings.
        weights (WeightsSection): Weight family.
        lr (LRSection): Control synthesis and cost experiments.
        ensemble (EnsembleSection): Statistical run.
    """

    domain: DomainSection = DomainSection()
    noise: NoiseSection = NoiseSection()
    nonlinearity: NonlinearitySection = NonlinearitySection()
    weights: WeightsSection = WeightsSection()
    lr: LRSection = LRSection()
    ensemble: EnsembleSection = EnsembleSection()

    @model_validator(mode="after")
    def check_domain(self) -> "RunConfig":
        domain = self.domain
        if domain.n_grid < 2 * domain.n_modes:
            raise ValueError(f"n_grid={domain.n_grid} must be at least 2 n_modes={2 * domain.n_modes}")
        if not domain.control_a0 < domain.control_b0 <= domain.length:
            raise ValueError("control region must satisfy a0 < b0 <= length")
        return self


def _validated(data: dict, source: str) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in error['loc']) or 'config'}: {error['msg']}"
            for error in exc.errors()
        )
        raise ConfigError(f"invalid configuration {source}: {problems}")


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Read an INI run configuration; without a path the defaults are used.

    Raises:
        ConfigError: If the file is missing, unreadable, or holds unknown or invalid keys.
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    data = {section: dict(parser.items(section)) for section in parser.sections()}
    return _validated(data, str(path))


def apply_overrides(
    config: RunConfig,
    seed: Optional[int] = None,
    paths: Optional[int] = None,
    modes: Optional[int] = None,
    dt: Optional[float] = None,
    preset: Optional[str] = None,
) -> RunConfig:
    """
    Apply command line flags on top of a configuration.

    Raises:
        ConfigError: If dt does not divide the horizon or a value is invalid.
    """
    data = config.model_dump()
    if seed is not None:
        data["noise"]["seed"] = seed
    if paths is not None:
        data["ensemble"]["n_paths"] = paths
    if modes is not None:
        data["domain"]["n_modes"] = modes
        if data["domain"]["n_grid"] < 2 * modes:
            data["domain"]["n_grid"] = 4 * modes
    if dt is not None:
        horizon = data["domain"]["horizon"]
        steps = int(round(horizon / dt)) if dt > 0 else 0
        if steps < 1 or abs(steps * dt - horizon) > 1e-9 * horizon:
            raise ConfigError(f"--dt {dt} does not divide the horizon {horizon}")
        data["domain"]["steps"] = steps
    if preset is not None:
        data["nonlinearity"]["preset"] = preset
    return _validated(data, "after flag overrides")


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical JSON form of the configuration."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_grid(config: RunConfig) -> SpectralGrid:
    domain = config.domain
    return SpectralGrid(domain.length, domain.n_modes, domain.n_grid)


def build_spec(config: RunConfig) -> NonlinearitySpec:
    section = config.nonlinearity
    overrides = {
        "alpha": section.alpha,
        "beta": section.beta,
        "gamma_coef": section.gamma,
        "p": section.p,
        "q": section.q,
        "r": section.r,
        "drift_shift": section.drift_shift,
    }
    try:
        return NonlinearitySpec.preset(
            section.preset, **{k: v for k, v in overrides.items() if v is not None}
        )
    except ValidationError as exc:
        raise ConfigError(f"invalid nonlinearity: {exc.errors()[0]['msg']}")


def build_model(config: RunConfig, spec: Optional[NonlinearitySpec] = None) -> HeatModel:
    domain = config.domain
    spec = spec or build_spec(config)
    region = ControlRegion(domain.control_a0, domain.control_b0, domain.length)
    return HeatModel(build_grid(config), region, config.noise.a, spec.drift_shift)


def build_weights(config: RunConfig, spec: Optional[NonlinearitySpec] = None) -> WeightParams:
    spec = spec or build_spec(config)
    section = config.weights
    return WeightParams(
        s=section.s if section.s is not None else spec.s,
        Q=section.Q,
        P=section.P,
        zeta=section.zeta,
        M_cost=section.M_cost,
        T=config.domain.horizon,
    )


def build_schedule(config: RunConfig, horizon: Optional[float] = None) -> LRSchedule:
    return build_lr_schedule(horizon or config.domain.horizon, config.lr.M_spec, config.lr.k_max)


def build_problem(config: RunConfig, R: Optional[float] = None) -> SemilinearProblem:
    """Assemble the semilinear pipeline; R falls back to the configured radius, then to 1."""
    spec = build_spec(config)
    radius = R if R is not None else (config.ensemble.R or 1.0)
    return SemilinearProblem(
        model=build_model(config, spec),
        spec=spec,
        trunc=TruncationParams(radius),
        weights=build_weights(config, spec),
        dt=config.domain.dt,
        mode=SteeringMode(config.lr.steering),
        M_spec=config.lr.M_spec,
        k_max=config.lr.k_max,
        max_iter=config.nonlinearity.max_iter,
        tol=config.nonlinearity.tol,
    )


def build_ensemble(config: RunConfig, delta: Optional[float] = None) -> EnsembleConfig:
    section = config.ensemble
    return EnsembleConfig(
        n_paths=section.n_paths,
        seed=config.noise.seed,
        delta=section.delta if delta is None else delta,
        R=section.R,
        eps=section.eps,
        calibration_paths=section.calibration_paths,
        workers=section.workers,
    )
