"""
Experiment services behind the command line: each one turns a RunConfig into
tables and documents, and the record store helpers persist ensemble paths so an
interrupted run resumes from the missing path indices.
"""

import asyncio
import logging
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import integrate, stats
from sqlalchemy import select
from sqlalchemy.ext.asyncio import AsyncSession

from spdecontrol.config import (
    RunConfig,
    build_ensemble,
    build_grid,
    build_model,
    build_problem,
    build_schedule,
    build_spec,
    build_weights,
    config_hash,
)
from spdecontrol.database.db_connection import get_db
from spdecontrol.exceptions import LabError
from spdecontrol.lab.models import EnsembleRun, PathRecordRow
from spdecontrol.lab.schemas import (
    CostFitOut,
    EnsembleReport,
    LinearControlSummary,
    ObservabilityFitOut,
    SemilinearSummary,
    SimulationSummary,
    SourceDemoSummary,
    VerifyCheck,
    VerifyReport,
    WindowOut,
)
from spdecontrol.lab.writers import dumps, render_csv
from spdecontrol.numerics.lrcontrol import (
    estimate_cost_constant,
    hum_control,
    hum_gramian,
    lr_null_control,
    observability_curve,
)
from spdecontrol.numerics.paths import generator, refine, sample_path
from spdecontrol.numerics.sde import (
    HeatModel,
    SourceKind,
    SourceTerm,
    Trajectory,
    oracle_transform_solution,
    solve_linear,
)
from spdecontrol.numerics.semilinear import SemilinearProblem
from spdecontrol.numerics.source_method import SourceResult, source_term_control
from spdecontrol.numerics.spectral import ControlRegion, SpectralGrid, control_mass_matrix, mode_norms
from spdecontrol.numerics.statlab import (
    EnsembleConfig,
    PathRecord,
    calibrate,
    calibrate_delta,
    estimate_probability,
    run_path,
    sample_initial_data,
    summarize,
)
from spdecontrol.numerics.weights import (
    WeightParams,
    domination_ratios,
    log_gamma,
    log_rho,
    log_rho0,
    rho,
    source_schedule,
    validate,
    weight_profile,
)

logger = logging.getLogger(__name__)

SHOWN_MODES = 8
VERIFY_STREAM = 3
COST_FIT_R2 = 0.95
OBSERVABILITY_FIT_R2 = 0.9
CONTRACTION_M_COST = 1e-4
REPRODUCIBILITY_PATHS = 4

Table = Tuple[List[str], List[Sequence[Any]]]


@dataclass
class ExperimentOutput:
    """
    Tables and documents of one experiment, keyed by artifact name.

    Attributes:
        command (str): Subcommand that produced them.
        tables (Dict[str, Table]): CSV artifacts as (header, rows).
        documents (Dict[str, BaseModel]): JSON artifacts.
    """

    command: str
    tables: Dict[str, Table] = field(default_factory=dict)
    documents: Dict[str, BaseModel] = field(default_factory=dict)


def trajectory_table(trajectory: Trajectory, grid: SpectralGrid, shown: int = SHOWN_MODES) -> Table:
    """Time, L2 and H^1_0 norms, and the first coefficients of a trajectory."""
    shown = min(shown, grid.n_modes)
    header = ["t", "l2", "h1"] + [f"y_{k}" for k in range(1, shown + 1)]
    l2 = trajectory.norms(grid, 0)
    h1 = trajectory.norms(grid, 1)
    rows = [
        [trajectory.times[n], l2[n], h1[n], *trajectory.coefficients[n, :shown]]
        for n in range(len(trajectory))
    ]
    return header, rows


def unit_initial_state(config: RunConfig, path_index: int = 0) -> np.ndarray:
    """Unit H^1_0 initial data of the configured seed."""
    return sample_initial_data(config.noise.seed, path_index, 1.0, build_grid(config))


def simulate(config: RunConfig) -> ExperimentOutput:
    """Uncontrolled linear equation along path 0."""
    model = build_model(config)
    domain = config.domain
    path = sample_path(config.noise.seed, domain.dt, domain.horizon, 0)
    y0 = unit_initial_state(config)
    trajectory = solve_linear(y0, model, path)
    grid = model.grid
    summary = SimulationSummary(
        initial_l2=float(np.linalg.norm(y0)),
        initial_h1=float(mode_norms(y0, grid.eigenvalues, 1)),
        terminal_l2=float(np.linalg.norm(trajectory.coefficients[-1])),
        decay_bound=float(np.exp(-model.rates[0] * domain.horizon) * np.linalg.norm(y0)),
        n_steps=path.n_steps,
    )
    logger.info("simulate: ||y(T)|| = %.6g", summary.terminal_l2)
    return ExperimentOutput(
        "simulate",
        tables={"trajectory.csv": trajectory_table(trajectory, grid)},
        documents={"simulation.json": summary},
    )


def control_linear(config: RunConfig) -> ExperimentOutput:
    """Lebeau-Robbiano null control of the linear equation along path 0."""
    model = build_model(config)
    domain = config.domain
    path = sample_path(config.noise.seed, domain.dt, domain.horizon, 0)
    y0 = unit_initial_state(config)
    result = lr_null_control(y0, model, path, build_schedule(config), config.lr.terminal_tol)
    initial = float(np.linalg.norm(y0))
    windows = [WindowOut(**asdict(report)) for report in result.windows]
    summary = LinearControlSummary(
        initial_l2=initial,
        terminal_l2=result.terminal_norm,
        terminal_ratio_sq=(result.terminal_norm / initial) ** 2,
        cost=result.control.cost,
        converged=result.converged,
        windows=windows,
    )
    window_header = list(WindowOut.model_fields)
    window_rows = [[getattr(w, name) for name in window_header] for w in windows]
    logger.info("control-linear: cost %.6g, ||y(T)||^2/||y0||^2 = %.3g", summary.cost, summary.terminal_ratio_sq)
    return ExperimentOutput(
        "control-linear",
        tables={
            "trajectory.csv": trajectory_table(result.trajectory, model.grid),
            "windows.csv": (window_header, window_rows),
        },
        documents={"control.json": summary},
    )


def cost_curve(config: RunConfig, model: Optional[HeatModel] = None, n_paths: Optional[int] = None) -> ExperimentOutput:
    """Median control cost over the configured horizons and the fit of C exp(C / T)."""
    model = model or build_model(config)
    lr = config.lr
    n_paths = n_paths or lr.cost_paths
    points, fit = estimate_cost_constant(
        lr.cost_horizons,
        n_paths,
        unit_initial_state(config),
        model,
        config.domain.dt,
        config.noise.seed,
        lr.M_spec,
        lr.k_max,
    )
    header = ["T", "n_paths", "cost_median", "cost_q25", "cost_q75", "terminal_norm_median"]
    rows = [[getattr(p, name) for name in header] for p in points]
    document = CostFitOut(
        c0=fit.c0,
        c1=fit.c1,
        r2=fit.r2,
        M_cost=fit.M_cost,
        horizons=[p.T for p in points],
        n_paths=n_paths,
    )
    logger.info("cost-curve: c1=%.6g r2=%.4f M_cost=%.6g", fit.c1, fit.r2, fit.M_cost)
    return ExperimentOutput("cost-curve", tables={"cost_curve.csv": (header, rows)}, documents={"cost_fit.json": document})


def obs_curve(config: RunConfig) -> ExperimentOutput:
    """Observability constant against sqrt(mu) over the first cutoffs."""
    model = build_model(config)
    lr = config.lr
    curve = observability_curve(lr.obs_tau, lr.obs_cutoffs, model.mass, model.grid.eigenvalues, model.shift)
    rows = [[mu, np.sqrt(mu), kappa, np.log(kappa)] for mu, kappa in zip(curve.cutoffs, curve.kappas)]
    document = ObservabilityFitOut(
        tau=lr.obs_tau,
        slope=curve.slope,
        intercept=curve.intercept,
        r2=curve.r2,
        n_cutoffs=lr.obs_cutoffs,
    )
    return ExperimentOutput(
        "obs-curve",
        tables={"obs_curve.csv": (["mu", "sqrt_mu", "kappa", "log_kappa"], rows)},
        documents={"obs_fit.json": document},
    )


def demo_sources(times: np.ndarray, params: WeightParams, grid: SpectralGrid) -> Tuple[SourceTerm, SourceTerm]:
    """F = rho(t) (1 + sin(2 pi t) / 2) (phi_1 + phi_2 / 2) and G = 0.1 rho(t) phi_1."""
    weight = np.asarray(rho(times, params))
    shape = np.zeros(grid.n_modes)
    shape[0] = 1.0
    if grid.n_modes > 1:
        shape[1] = 0.5
    drift = (weight * (1 + 0.5 * np.sin(2 * np.pi * times)))[:, None] * shape
    diffusion = np.zeros((times.shape[0], grid.n_modes))
    diffusion[:, 0] = 0.1 * weight
    return SourceTerm(SourceKind.DRIFT, drift), SourceTerm(SourceKind.DIFFUSION, diffusion)


def run_source_demo(config: RunConfig, path_index: int = 0) -> SourceResult:
    spec = build_spec(config)
    model = build_model(config, spec)
    params = build_weights(config, spec)
    path = sample_path(config.noise.seed, config.domain.dt, config.domain.horizon, path_index)
    profile = weight_profile(params, path.times, config.weights.guard_divisor)
    F, G = demo_sources(path.times, params, model.grid)
    y0 = unit_initial_state(config, path_index)
    return source_term_control(
        y0, F, G, model, path, params, config.lr.steering, config.lr.M_spec, config.lr.k_max, profile
    )


def source_demo(config: RunConfig) -> ExperimentOutput:
    """Source-term control with decaying sources along path 0, with its weighted certificate."""
    params = build_weights(config)
    result = run_source_demo(config)
    violations = validate(params)
    for violation in violations:
        logger.warning("weight parameters: %s", violation)
    summary = SourceDemoSummary(
        certificate=result.certificate,
        certificate_ratio=result.certificate.ratio,
        terminal_l2=result.terminal_norm,
        cost=result.control.cost,
        blocks=len(result.blocks),
        steered_blocks=sum(b.steered for b in result.blocks),
        weight_violations=violations,
        domination=domination_ratios(params),
    )
    block_rows = [asdict(b) for b in result.blocks]
    block_header = list(block_rows[0]) if block_rows else []
    block_rows = [list(row.values()) for row in block_rows]
    profile = result.profile
    weight_rows = [
        [t, a, b, c]
        for t, a, b, c in zip(
            profile.window_times(),
            profile.log_rho0[: profile.stop],
            profile.log_rho[: profile.stop],
            profile.log_rho_hat[: profile.stop],
        )
    ]
    logger.info("source-demo: ||y(T)|| = %.3g, certificate ratio %.6g", result.terminal_norm, summary.certificate_ratio)
    return ExperimentOutput(
        "source-demo",
        tables={
            "trajectory.csv": trajectory_table(result.trajectory, build_grid(config)),
            "blocks.csv": (block_header, block_rows),
            "weights.csv": (["t", "log_rho0", "log_rho", "log_rho_hat"], weight_rows),
        },
        documents={"certificate.json": summary},
    )


def resolve_radius(problem: SemilinearProblem, ensemble: EnsembleConfig) -> Tuple[float, float]:
    """
    Truncation radius and initial data scale of a run.

    A configured R is used as given with the configured delta; otherwise both come
    from the linear-regime calibration.
    """
    if ensemble.R is not None:
        return ensemble.R, ensemble.delta
    calibration = calibrate(problem, ensemble)
    return calibration.R, calibration.delta


def semilinear(config: RunConfig) -> ExperimentOutput:
    """Picard iteration of the truncated system on path 0."""
    problem = build_problem(config)
    ensemble = build_ensemble(config)
    R, delta = resolve_radius(problem, ensemble)
    problem = problem.with_radius(R)
    y0 = sample_initial_data(config.noise.seed, 0, delta, problem.model.grid)
    result = problem.solve(y0, problem.path(config.noise.seed, 0))
    summary = SemilinearSummary(
        preset=config.nonlinearity.preset,
        R=R,
        iterations=result.iterations,
        contraction_max=result.contraction_max,
        ratios=result.ratios,
        x_norm_T=float(result.x_norms[-1]),
        terminal_l2=result.terminal_norm,
        truncation_active=result.truncation_active(R),
        residual=result.residual,
        cost=result.control.cost,
    )
    logger.info("semilinear: %d iterations, ||y||_X = %.6g", result.iterations, summary.x_norm_T)
    return ExperimentOutput(
        "semilinear",
        tables={
            "trajectory.csv": trajectory_table(result.trajectory, problem.model.grid),
            "picard.csv": (["step", "ratio"], [[i + 2, r] for i, r in enumerate(result.ratios)]),
        },
        documents={"semilinear.json": summary},
    )


async def get_or_create_run(
    session: AsyncSession, run_hash: str, ensemble: EnsembleConfig, R: float
) -> EnsembleRun:
    """
    Retrieve the stored run of a configuration, creating it on first use.

    Raises:
        LabError: If a stored run with the same hash used another radius or scale.
    """
    run = await session.execute(select(EnsembleRun).where(EnsembleRun.config_hash == run_hash))
    run = run.scalars().first()
    if run is None:
        run = EnsembleRun(
            config_hash=run_hash,
            base_seed=str(ensemble.seed),
            n_paths=ensemble.n_paths,
            R=R,
            delta=ensemble.delta,
        )
        session.add(run)
        await session.commit()
        await session.refresh(run)
    elif run.R != R or run.delta != ensemble.delta:
        raise LabError(f"stored run {run_hash[:12]} used R={run.R}, delta={run.delta}")
    return run


async def stored_records(session: AsyncSession, run: EnsembleRun) -> List[PathRecord]:
    rows = await session.execute(
        select(PathRecordRow).where(PathRecordRow.run_id == run.id).order_by(PathRecordRow.path_id)
    )
    return [row.to_record(int(run.base_seed)) for row in rows.scalars().all()]


async def run_ensemble_stored(
    problem: SemilinearProblem,
    ensemble: EnsembleConfig,
    session: AsyncSession,
    run_hash: str,
    progress: Optional[Callable[[PathRecord], None]] = None,
) -> List[PathRecord]:
    """
    Run the missing paths of an ensemble concurrently and store every record.

    Paths are computed in worker threads, at most ensemble.workers at a time;
    only this coroutine writes to the session.

    Returns:
        List[PathRecord]: All records of the run, sorted by path index.
    """
    run = await get_or_create_run(session, run_hash, ensemble, problem.trunc.R)
    done = {r.path_id for r in await stored_records(session, run)}
    missing = [i for i in range(ensemble.n_paths) if i not in done]
    if done:
        logger.info("resuming run %s: %d of %d paths stored", run_hash[:12], len(done), ensemble.n_paths)
    semaphore = asyncio.Semaphore(ensemble.workers)

    async def compute(index: int) -> PathRecord:
        async with semaphore:
            return await asyncio.to_thread(run_path, problem, ensemble, index)

    for finished in asyncio.as_completed([compute(i) for i in missing]):
        record = await finished
        session.add(PathRecordRow.from_record(run.id, record))
        await session.commit()
        if progress is not None:
            progress(record)
    records = await stored_records(session, run)
    return [r for r in records if r.path_id < ensemble.n_paths]


def records_table(records: Sequence[PathRecord]) -> Table:
    header = list(PathRecord.model_fields)
    return header, [[getattr(r, name) for name in header] for r in records]


async def ensemble_run(
    config: RunConfig, session: AsyncSession, progress: Optional[Callable[[PathRecord], None]] = None
) -> ExperimentOutput:
    """Calibrate C^2, R and delta, run the stored ensemble and compare with the Markov bound."""
    problem = build_problem(config)
    ensemble = build_ensemble(config)
    calibration = calibrate(problem, ensemble)
    ensemble = ensemble.model_copy(update={"delta": calibration.delta})
    problem = problem.with_radius(calibration.R)
    records = await run_ensemble_stored(problem, ensemble, session, config_hash(config), progress)
    summary = summarize(records, calibration.C_hat_sq, calibration.delta, calibration.R)
    terminals = [r.terminal_norm for r in records if not r.failed]
    report = EnsembleReport(
        summary=summary,
        R_policy=calibration.R_policy,
        terminal_max=max(terminals) if terminals else None,
        calibration_paths=len(calibration.records),
    )
    logger.info(
        "ensemble: p_hat=%.4f [%.4f, %.4f], predicted exceedance %.4g",
        summary.p_hat,
        summary.ci_low,
        summary.ci_high,
        summary.eps_predicted,
    )
    return ExperimentOutput("ensemble", tables={"records.csv": records_table(records)}, documents={"ensemble.json": report})


def _check(name: str, passed: bool, value: float, threshold: Optional[float], detail: str = "") -> VerifyCheck:
    value = float(value)
    return VerifyCheck(
        name=name,
        passed=bool(passed),
        value=value if np.isfinite(value) else None,
        threshold=threshold,
        detail=detail,
    )


def _random_weight_params(rng: np.random.Generator) -> WeightParams:
    s = rng.uniform(1.2, 3.0)
    Q = 1 + rng.uniform(0.1, 0.9) * (2 ** (1 / s) - 1)
    Qs = Q**s
    P = Qs / (2 - Qs) * rng.uniform(1.2, 3.0)
    low = (1 + P) * Qs / 2
    zeta = low + rng.uniform(0.1, 0.9) * (P - low)
    return WeightParams(s=s, Q=Q, P=P, zeta=zeta, M_cost=rng.uniform(0.5, 5.0), T=rng.uniform(0.5, 2.0))


def check_weight_identity(config: RunConfig, trials: int = 50, k_last: int = 10) -> VerifyCheck:
    """rho_0(T_k+2) = rho(T_k) gamma(T_k+2 - T_k+1), compared in the log domain."""
    rng = generator(config.noise.seed, 0, VERIFY_STREAM)
    worst = 0.0
    for _ in range(trials):
        params = _random_weight_params(rng)
        times = source_schedule(params.T, params.Q, params.s, k_last + 2)
        left = log_rho0(times[2:], params)
        right = log_rho(times[:-2], params) + log_gamma(np.diff(times)[1:], params.M_cost)
        worst = max(worst, float(np.max(np.abs(left - right) / np.abs(left))))
    return _check("weight_identity", worst <= 1e-12, worst, 1e-12, f"{trials} parameter sets, k = 0..{k_last}")


def check_closed_forms(config: RunConfig, m: int = 16, tau: float = 0.25) -> VerifyCheck:
    """Mass matrix and continuous Gramian against quadrature."""
    domain = config.domain
    grid = SpectralGrid(domain.length, m, 4 * m)
    region = ControlRegion(domain.control_a0, domain.control_b0, domain.length)
    mass = control_mass_matrix(region, m, domain.length)
    x = np.linspace(region.a0, region.b0, 20001)
    basis = np.stack([grid.basis(k, x) for k in range(1, m + 1)])
    quadrature = integrate.simpson(basis[:, None, :] * basis[None, :, :], x=x, axis=-1)
    mass_error = float(np.max(np.abs(mass - quadrature)))
    rates = grid.eigenvalues
    gramian = hum_gramian(float(rates[-1]), tau, mass, rates)
    integrand = lambda t: np.exp(-rates * (tau - t))[:, None] * mass * np.exp(-rates * (tau - t))[None, :]
    reference, _ = integrate.quad_vec(integrand, 0.0, tau, epsabs=1e-14, epsrel=1e-12)
    error = max(mass_error, float(np.max(np.abs(gramian - reference))))
    return _check("closed_forms", error <= 1e-10, error, 1e-10, f"{m} x {m} mass matrix and Gramian")


def check_hum_steering(config: RunConfig, m: int = 8, tau: float = 0.25) -> VerifyCheck:
    """Continuous HUM control of the projected system; the terminal state is e^{-Lambda tau} x0 + G eta."""
    domain = config.domain
    grid = SpectralGrid(domain.length, m, 4 * m)
    region = ControlRegion(domain.control_a0, domain.control_b0, domain.length)
    mass = control_mass_matrix(region, m, domain.length)
    x0 = generator(config.noise.seed, 1, VERIFY_STREAM).standard_normal(m)
    rates = grid.eigenvalues
    hum = hum_control(x0, float(rates[-1]), tau, mass, rates)
    terminal = np.exp(-rates * tau) * x0 + hum_gramian(float(rates[-1]), tau, mass, rates) @ hum.eta
    ratio = float(np.linalg.norm(terminal) / np.linalg.norm(x0))
    return _check("hum_steering", ratio <= 1e-8, ratio, 1e-8, f"{m} modes, tau={tau}")


def _linear_model(config: RunConfig, n_modes: int, a: float) -> HeatModel:
    domain = config.domain
    grid = SpectralGrid(domain.length, n_modes, 4 * n_modes)
    return HeatModel(grid, ControlRegion(domain.control_a0, domain.control_b0, domain.length), a)


def check_linear_null_control(config: RunConfig, n_paths: int, n_modes: int = 32) -> VerifyCheck:
    model = _linear_model(config, n_modes, config.noise.a)
    dt = 1.0 / 2048
    schedule = build_schedule(config, 1.0)
    ratios = []
    for i in range(n_paths):
        y0 = sample_initial_data(config.noise.seed, i, 1.0, model.grid)
        result = lr_null_control(y0, model, sample_path(config.noise.seed, dt, 1.0, i), schedule)
        ratios.append((result.terminal_norm / np.linalg.norm(y0)) ** 2)
    median = float(np.median(ratios))
    return _check("linear_null_control", median <= 1e-5, median, 1e-5, f"median ||y(T)||^2/||y0||^2 over {n_paths} paths")


def check_cost_curve(config: RunConfig) -> VerifyCheck:
    """
    Deterministic cost sweep: log median cost against 1/T must be affine with
    R^2 >= 0.95 and positive slope, and the median cost must grow as T shrinks.
    """
    model = build_model(config)
    model = HeatModel(model.grid, model.region, 0.0, model.shift)
    output = cost_curve(config, model=model, n_paths=1)
    fit = output.documents["cost_fit.json"]
    _, rows = output.tables["cost_curve.csv"]
    medians = [row[2] for row in rows]
    growing = all(short > long for short, long in zip(medians, medians[1:]))
    dominated = all(np.log(row[2]) <= np.log(fit.M_cost) + fit.M_cost / row[0] for row in rows)
    passed = fit.c1 > 0 and growing and fit.r2 >= COST_FIT_R2
    return _check(
        "cost_curve",
        passed,
        fit.r2,
        COST_FIT_R2,
        f"R^2 of log cost against 1/T; c1={fit.c1:.6g}, M_cost={fit.M_cost:.6g}, "
        f"growing={growing}, dominated={dominated}",
    )


def check_observability(config: RunConfig) -> VerifyCheck:
    """log kappa(mu, tau) against sqrt(mu) must be affine with R^2 >= 0.9 and positive slope; kappa grows with mu."""
    model = build_model(config)
    lr = config.lr
    curve = observability_curve(lr.obs_tau, lr.obs_cutoffs, model.mass, model.grid.eigenvalues, model.shift)
    monotone = bool(np.all(np.diff(curve.kappas) >= -1e-12 * curve.kappas[1:]))
    return _check(
        "observability_curve",
        curve.slope > 0 and monotone and curve.r2 >= OBSERVABILITY_FIT_R2,
        curve.r2,
        OBSERVABILITY_FIT_R2,
        f"R^2 of log kappa against sqrt(mu); slope={curve.slope:.6g}, monotone={monotone}",
    )


def check_strong_order(config: RunConfig, n_paths: int = 20, halvings: int = 4, n_modes: int = 16) -> VerifyCheck:
    """Exponential Euler against the transform oracle with G = 0 on bridge-refined paths."""
    model = _linear_model(config, n_modes, config.noise.a)
    base_dt = 1.0 / 64
    shape = 1.0 / np.arange(1, n_modes + 1)
    y0 = sample_initial_data(config.noise.seed, 0, 1.0, model.grid)
    errors = np.zeros(halvings + 1)
    for i in range(n_paths):
        coarse = sample_path(config.noise.seed, base_dt, 1.0, i)
        for level in range(halvings + 1):
            path = coarse if level == 0 else refine(coarse, 2**level)
            F = SourceTerm.from_function(SourceKind.DRIFT, lambda t: np.cos(2 * np.pi * t) * shape, path.times)
            stepped = solve_linear(y0, model, path, F=F).coefficients[-1]
            oracle = oracle_transform_solution(y0, model, path, F=F).coefficients[-1]
            errors[level] += np.linalg.norm(stepped - oracle) / n_paths
    steps = base_dt / 2.0 ** np.arange(halvings + 1)
    order = float(stats.linregress(np.log(steps), np.log(errors)).slope)
    return _check("strong_order", order >= 0.9, order, 0.9, f"mean terminal error over {n_paths} paths")


def check_energy_estimate(
    config: RunConfig, trials: int = 100, paths_per_trial: int = 4, n_modes: int = 16, tau: float = 0.5
) -> VerifyCheck:
    """
    E sup ||y||^2 / (||y0||^2 + int ||F||_{H^-1}^2 + ||G||^2) is stable across trials.

    Every trial draws y0, F and G with unit norms, F and G constant on [0, tau],
    and averages the left side over its own Brownian paths.
    """
    model = _linear_model(config, n_modes, config.noise.a)
    dt = 1.0 / 256
    grid = model.grid
    ratios = []
    for j in range(trials):
        rng = generator(config.noise.seed, j, VERIFY_STREAM, 1)
        y0 = rng.standard_normal(n_modes)
        y0 /= np.linalg.norm(y0)
        f = rng.standard_normal(n_modes)
        f /= mode_norms(f, grid.eigenvalues, -1)
        g = rng.standard_normal(n_modes)
        g /= np.linalg.norm(g)
        right = 1.0 + 2.0 * tau
        sup_sq = []
        for i in range(paths_per_trial):
            path = sample_path(config.noise.seed, dt, tau, j * paths_per_trial + i)
            n_nodes = path.n_steps + 1
            F = SourceTerm(SourceKind.DRIFT, np.tile(f, (n_nodes, 1)))
            G = SourceTerm(SourceKind.DIFFUSION, np.tile(g, (n_nodes, 1)))
            trajectory = solve_linear(y0, model, path, F=F, G=G)
            sup_sq.append(np.max(trajectory.norms(grid, 0) ** 2))
        ratios.append(float(np.mean(sup_sq)) / right)
    spread = float(np.max(ratios) / np.median(ratios))
    return _check(
        "energy_estimate",
        spread <= 10,
        spread,
        10.0,
        f"max/median over {trials} trials of {paths_per_trial} paths, tau={tau}",
    )


def check_source_method(config: RunConfig, n_paths: int) -> VerifyCheck:
    terminals, ratios = [], []
    for i in range(n_paths):
        result = run_source_demo(config, i)
        terminals.append(result.terminal_norm)
        ratios.append(result.certificate.ratio)
    spread = float(np.max(ratios) / np.median(ratios)) if np.median(ratios) > 0 else float("inf")
    worst = float(np.max(terminals))
    passed = worst <= 1e-6 and np.all(np.isfinite(ratios)) and spread <= 10
    return _check(
        "source_method",
        passed,
        worst,
        1e-6,
        f"max ||y(T)|| over {n_paths} paths; certificate ratio max/median {spread:.4g}",
    )


def contraction_config(config: RunConfig, M_cost: float = CONTRACTION_M_COST) -> RunConfig:
    """
    Burgers preset with a small cost constant.

    At M_cost = 5 the weight rho_hat(0) is about e^-72, so ||y0 / rho_hat(0)|| of any
    admissible y0 lies far above R and the cutoff removes the nonlinearity. At
    M_cost = 1e-4 rho_hat stays above e^-1.5 on the division window and f_R, g_R act.
    """
    data = config.model_dump()
    data["nonlinearity"]["preset"] = "burgers"
    data["weights"]["M_cost"] = M_cost
    return RunConfig.model_validate(data)


def check_picard(config: RunConfig, n_paths: int) -> Tuple[VerifyCheck, float, float]:
    """
    Burgers preset at delta = 0.01 and R = R_policy in the contraction regime;
    returns the check, C^2 and R. Every path must iterate more than once.
    """
    config = contraction_config(config)
    problem = build_problem(config)
    ensemble = build_ensemble(config, delta=0.01).model_copy(update={"n_paths": n_paths, "R": None})
    calibration = calibrate(problem, ensemble)
    problem = problem.with_radius(calibration.R_policy)
    iterations, contraction, x_sq, y_sq = [], [], [], []
    failures = 0
    for i in range(n_paths):
        record = run_path(problem, ensemble, i)
        if record.failed:
            failures += 1
            continue
        iterations.append(record.iterations)
        contraction.append(record.contraction_max)
        x_sq.append(record.x_norm_T**2)
        y_sq.append(record.y0_h1**2)
    ratio = float(np.mean(x_sq) / np.mean(y_sq)) if x_sq else float("inf")
    worst = max(contraction, default=float("inf"))
    passed = (
        failures == 0
        and min(iterations) > 1
        and max(iterations) <= 20
        and worst <= 0.9
        and np.isfinite(ratio)
    )
    check = _check(
        "picard_contraction",
        passed,
        worst,
        0.9,
        f"{n_paths - failures}/{n_paths} converged in {min(iterations, default=0)} to "
        f"{max(iterations, default=0)} iterations, R={calibration.R_policy:.6g}, "
        f"E||y||_X^2 / E||y0||^2 = {ratio:.6g}",
    )
    return check, calibration.C_hat_sq, calibration.R_policy


def check_statistical(config: RunConfig, n_paths: int, C_hat_sq: float, R: float, eps: float = 0.05) -> VerifyCheck:
    """Exceedance of ||y||_X > R at delta = R sqrt(eps / C^2) in the contraction regime."""
    config = contraction_config(config)
    delta = calibrate_delta(C_hat_sq, R, eps)
    problem = build_problem(config, R)
    ensemble = build_ensemble(config, delta=delta).model_copy(update={"n_paths": n_paths, "R": R})
    records = [run_path(problem, ensemble, i) for i in range(n_paths)]
    estimate = estimate_probability(records, R)
    exceedance_high = 1.0 - estimate.ci_low
    terminal = max((r.terminal_norm for r in records if not r.failed), default=float("inf"))
    passed = exceedance_high <= eps + 0.05 and terminal <= 1e-6 * delta
    return _check(
        "statistical_guarantee",
        passed,
        exceedance_high,
        eps + 0.05,
        f"upper 95% bound of the exceedance fraction over {n_paths} paths; max ||y(T)|| / delta = {terminal / delta:.3g}",
    )


def rendered(output: ExperimentOutput) -> Dict[str, str]:
    """Artifact texts of an experiment, exactly as the writer stores them."""
    texts = {name: render_csv(*table) for name, table in output.tables.items()}
    texts.update((name, dumps(document)) for name, document in output.documents.items())
    return texts


async def fresh_ensemble(config: RunConfig) -> ExperimentOutput:
    """Ensemble run into a new record store that is removed afterwards."""
    output = None
    with tempfile.TemporaryDirectory() as directory:
        async for session in get_db(f"sqlite+aiosqlite:///{Path(directory) / 'ensemble.db'}"):
            output = await ensemble_run(config, session)
    return output


def check_reproducibility(config: RunConfig, n_paths: int = REPRODUCIBILITY_PATHS) -> VerifyCheck:
    """
    Two runs with one configuration give byte-identical artifacts: simulate, the
    verify report without this check, and the ensemble into fresh record stores.

    verify and ensemble rerun with at most n_paths paths.
    """
    data = config.model_dump()
    data["ensemble"]["n_paths"] = min(n_paths, config.ensemble.n_paths)
    data["ensemble"]["calibration_paths"] = min(n_paths, config.ensemble.calibration_paths)
    reduced = RunConfig.model_validate(data)
    runs: Dict[str, Callable[[], Dict[str, str]]] = {
        "simulate": lambda: rendered(simulate(config)),
        "verify": lambda: {"verify.json": dumps(verify(reduced, reproducibility=False))},
        "ensemble": lambda: rendered(asyncio.run(fresh_ensemble(reduced))),
    }
    differing = [name for name, run in runs.items() if run() != run()]
    detail = f"reruns of {', '.join(runs)}"
    if differing:
        detail += f"; differing: {', '.join(differing)}"
    return _check("reproducibility", not differing, float(not differing), 1.0, detail)


def verify(config: RunConfig, reproducibility: bool = True) -> VerifyReport:
    """
    Invariant suite at desk scale; path counts follow ensemble.n_paths.

    Numerical failures of a check are reported as a failed check, not raised.
    """
    n_paths = config.ensemble.n_paths
    checks: List[VerifyCheck] = []

    def guarded(name: str, run: Callable[[], VerifyCheck]) -> Optional[VerifyCheck]:
        try:
            check = run()
        except (LabError, ArithmeticError) as exc:
            detail = exc.detail if isinstance(exc, LabError) else str(exc)
            check = VerifyCheck(name=name, passed=False, detail=f"{type(exc).__name__}: {detail}")
        logger.info("verify %s: %s", name, "ok" if check.passed else "FAILED")
        checks.append(check)
        return check

    guarded("weight_identity", lambda: check_weight_identity(config))
    guarded("closed_forms", lambda: check_closed_forms(config))
    guarded("hum_steering", lambda: check_hum_steering(config))
    guarded("linear_null_control", lambda: check_linear_null_control(config, n_paths))
    guarded("cost_curve", lambda: check_cost_curve(config))
    guarded("observability_curve", lambda: check_observability(config))
    guarded("strong_order", lambda: check_strong_order(config))
    guarded("energy_estimate", lambda: check_energy_estimate(config))
    guarded("source_method", lambda: check_source_method(config, n_paths))
    calibrated: Dict[str, float] = {}

    def picard() -> VerifyCheck:
        check, C_hat_sq, R = check_picard(config, n_paths)
        calibrated.update(C_hat_sq=C_hat_sq, R=R)
        return check

    guarded("picard_contraction", picard)
    if calibrated:
        guarded(
            "statistical_guarantee",
            lambda: check_statistical(config, n_paths, calibrated["C_hat_sq"], calibrated["R"]),
        )
    if reproducibility:
        guarded("reproducibility", lambda: check_reproducibility(config))
    return VerifyReport(passed=all(c.passed for c in checks), checks=checks)
