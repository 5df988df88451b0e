"""
Null control of the linear equation along one path.

Controls are synthesised on the noise-transformed system: with E(t) the
exponential factor of the path, y / E solves a deterministic heat equation
driven by B q / E, so the minimal-norm (HUM) control of the projected
deterministic system, multiplied back by E, steers the stochastic system.
The Gramians are the discrete ones of the exponential Euler stepper, so the
steering is exact up to round-off and regularisation.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, stats

from spdecontrol.exceptions import DomainError, GramianConditioningError, NonFiniteError
from spdecontrol.numerics.paths import BrownianPath, exp_factors, sample_path
from spdecontrol.numerics.sde import HeatModel, Trajectory, solve_linear, window_indices
from spdecontrol.numerics.spectral import low_mode_count

logger = logging.getLogger(__name__)

CONDITION_CAP = 1e12
TIKHONOV_SCALE = 1e-12
DEFAULT_M_SPEC = 10.0
DEFAULT_K_MAX = 6
DEFAULT_TERMINAL_TOL = 1e-3


@dataclass(frozen=True)
class LRSchedule:
    """
    Active/passive windows of the Lebeau-Robbiano scheme.

    Window k is active on [a_k, a_k + T_k] and passive on [a_k + T_k, a_k + 2 T_k],
    with T_k = horizon / 2^(k+2), a_0 = start and cutoff mu_k = M_spec 4^k.

    Attributes:
        horizon (float): Length of the controlled interval.
        M_spec (float): Base spectral cutoff.
        k_max (int): Index of the last window.
        start (float): Time of a_0.
    """

    horizon: float
    M_spec: float = DEFAULT_M_SPEC
    k_max: int = DEFAULT_K_MAX
    start: float = 0.0

    @cached_property
    def durations(self) -> np.ndarray:
        return self.horizon / 2.0 ** (np.arange(self.k_max + 1) + 2)

    @cached_property
    def starts(self) -> np.ndarray:
        return self.start + np.concatenate(([0.0], np.cumsum(2 * self.durations)[:-1]))

    @cached_property
    def cutoffs(self) -> np.ndarray:
        return self.M_spec * 4.0 ** np.arange(self.k_max + 1)

    @property
    def end(self) -> float:
        return self.start + self.horizon

    def active_windows(self) -> List[Tuple[float, float]]:
        return [(float(a), float(a + d)) for a, d in zip(self.starts, self.durations)]


def build_lr_schedule(
    T: float, M_spec: float = DEFAULT_M_SPEC, k_max: int = DEFAULT_K_MAX, start: float = 0.0
) -> LRSchedule:
    """
    Build and check the window schedule on [start, start + T].

    Raises:
        DomainError: If T or M_spec is nonpositive or k_max < 1.
    """
    if T <= 0 or M_spec <= 0:
        raise DomainError(f"T and M_spec must be positive, got T={T}, M_spec={M_spec}")
    if k_max < 1:
        raise DomainError(f"k_max must be at least 1, got {k_max}")
    schedule = LRSchedule(T, M_spec, k_max, start)
    last = schedule.starts[-1] + 2 * schedule.durations[-1]
    if last > schedule.end + 1e-12 * T or np.any(np.diff(schedule.cutoffs) <= 0):
        raise DomainError("window schedule does not fit the horizon")
    return schedule


@dataclass(frozen=True)
class ControlSignal:
    """
    Control coefficients q(t_n) in the restricted basis chi_{D0} phi_k at the path nodes.

    Attributes:
        coefficients (np.ndarray): Shape (n_nodes, n_modes); the stepper reads left endpoints.
        dt (float): Path step.
        blocks (Tuple[Tuple[int, int], ...]): Node index ranges of the active windows.
        cost (float): ||h||^2 in L2((0,T) x D0), the sum over steps of dt q^T B q.
    """

    coefficients: np.ndarray
    dt: float
    blocks: Tuple[Tuple[int, int], ...] = ()
    cost: float = 0.0

    @classmethod
    def build(
        cls,
        coefficients: np.ndarray,
        dt: float,
        mass: np.ndarray,
        blocks: Sequence[Tuple[int, int]] = (),
    ) -> "ControlSignal":
        coefficients = np.array(coefficients, dtype=float)
        if not np.all(np.isfinite(coefficients)):
            raise NonFiniteError("nonfinite control coefficients")
        steps = coefficients[:-1]
        cost = float(dt * np.einsum("ni,ij,nj->", steps, mass, steps))
        coefficients.setflags(write=False)
        return cls(coefficients, dt, tuple(blocks), max(cost, 0.0))

    @classmethod
    def zeros(cls, n_nodes: int, n_modes: int, dt: float) -> "ControlSignal":
        return cls(np.zeros((n_nodes, n_modes)), dt)

    @classmethod
    def glue(cls, signals: Sequence["ControlSignal"]) -> "ControlSignal":
        """Sum block controls with disjoint supports into one signal."""
        if not signals:
            raise DomainError("nothing to glue")
        coefficients = np.sum([s.coefficients for s in signals], axis=0)
        blocks = sorted(b for s in signals for b in s.blocks)
        return cls(coefficients, signals[0].dt, tuple(blocks), sum(s.cost for s in signals))

    def is_passive(self, index: int) -> bool:
        return not any(start <= index < stop for start, stop in self.blocks)


@dataclass(frozen=True)
class GramianFactor:
    """
    Cholesky factorisation of a (possibly regularised) Gramian.

    Attributes:
        gramian (np.ndarray): The unregularised Gramian.
        factor (tuple): Output of scipy.linalg.cho_factor.
        condition (float): Condition estimate before regularisation.
        regularized (bool): Whether the Tikhonov shift was applied.
    """

    gramian: np.ndarray
    factor: tuple
    condition: float
    regularized: bool

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve G x = rhs with one step of iterative refinement."""
        solution = linalg.cho_solve(self.factor, rhs)
        return solution + linalg.cho_solve(self.factor, rhs - self.gramian @ solution)


def factorize(gramian: np.ndarray, window: Optional[int] = None) -> GramianFactor:
    """
    Factorise a Gramian, shifting it by 1e-12 trace / m when its condition exceeds 1e12.

    Raises:
        GramianConditioningError: If the Gramian is not finite or the factorisation fails.
    """
    if not np.all(np.isfinite(gramian)):
        raise GramianConditioningError("nonfinite Gramian", float("inf"), window)
    spectrum = linalg.eigvalsh(gramian)
    condition = float(spectrum[-1] / spectrum[0]) if spectrum[0] > 0 else float("inf")
    shifted = gramian
    regularized = condition > CONDITION_CAP
    if regularized:
        m = gramian.shape[0]
        shifted = gramian + TIKHONOV_SCALE * np.trace(gramian) / m * np.eye(m)
        logger.debug("Gramian condition %.3g above cap, regularised (window %s)", condition, window)
    try:
        factor = linalg.cho_factor(shifted)
    except linalg.LinAlgError as exc:
        raise GramianConditioningError(f"Cholesky factorisation failed: {exc}", condition, window)
    return GramianFactor(gramian, factor, condition, regularized)


def _sum_ratio(s: np.ndarray, step: float, n_steps: int) -> np.ndarray:
    """sum_{m=1}^{n} exp(-s m step), elementwise."""
    numerator = np.exp(-s * step) * -np.expm1(-s * n_steps * step)
    denominator = -np.expm1(-s * step)
    return np.divide(
        numerator, denominator, out=np.full(s.shape, float(n_steps)), where=denominator != 0
    )


def hum_gramian(
    mu: float,
    tau: float,
    mass: np.ndarray,
    eigenvalues: np.ndarray,
    shift: float = 0.0,
    dt: Optional[float] = None,
) -> np.ndarray:
    """
    Controllability Gramian of the projected system on the modes with lambda_k <= mu.

    The continuous Gramian has entries B_ij (1 - exp(-(r_i + r_j) tau)) / (r_i + r_j)
    with r = lambda - shift. With dt given, the Gramian of the exponential Euler
    stepper, dt B_ij sum_{m=1}^{tau/dt} exp(-(r_i + r_j) m dt), is returned instead;
    it converges to the continuous one as dt -> 0.

    Params:
        mu (float): Spectral cutoff.
        tau (float): Control horizon.
        mass (np.ndarray): Control mass matrix, at least as large as the projected block.
        eigenvalues (np.ndarray): Dirichlet eigenvalues.
        shift (float): Linear drift.
        dt (Optional[float]): Step of the discrete Gramian.

    Raises:
        DomainError: If tau is nonpositive or no mode lies below mu.
    """
    if tau <= 0:
        raise DomainError(f"control horizon must be positive, got {tau}")
    m = low_mode_count(eigenvalues, mu)
    if m == 0:
        raise DomainError(f"no mode below the cutoff mu={mu}")
    rates = np.asarray(eigenvalues[:m]) - shift
    s = rates[:, None] + rates[None, :]
    block = np.asarray(mass)[:m, :m]
    if dt is None:
        integral = np.divide(-np.expm1(-s * tau), s, out=np.full(s.shape, tau), where=s != 0)
        return block * integral
    n_steps = int(round(tau / dt))
    if n_steps < 1:
        raise DomainError(f"control horizon {tau} shorter than one step {dt}")
    return dt * block * _sum_ratio(s, dt, n_steps)


@dataclass(frozen=True)
class HumControl:
    """
    Minimal-norm control q(t) = exp(-Lambda (tau - t)) eta of the projected system.

    Attributes:
        eta (np.ndarray): Adjoint terminal datum on the projected modes.
        rates (np.ndarray): Decay rates of the projected modes.
        tau (float): Horizon.
        n_modes (int): Size of the full state.
        cost (float): eta^T G eta.
        residual (float): Norm of the projected terminal state.
        condition (float): Gramian condition estimate.
        regularized (bool): Whether the Gramian was regularised.
    """

    eta: np.ndarray
    rates: np.ndarray
    tau: float
    n_modes: int
    cost: float
    residual: float = 0.0
    condition: float = 1.0
    regularized: bool = False

    @property
    def n_low(self) -> int:
        return self.eta.shape[0]

    def at(self, t: np.ndarray) -> np.ndarray:
        """Control coefficients at times t in [0, tau], padded to the full state size."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        q = np.zeros((t.shape[0], self.n_modes))
        q[:, : self.n_low] = np.exp(-np.outer(self.tau - t, self.rates)) * self.eta
        return q


def _steering_rhs(x0: np.ndarray, rates: np.ndarray, tau: float, dt: Optional[float]) -> np.ndarray:
    rhs = -np.exp(-rates * tau) * x0
    if dt is None:
        return rhs
    z = rates * dt
    return rhs * np.divide(z, np.expm1(z), out=np.ones_like(z), where=z != 0)


def hum_control(
    x0: np.ndarray,
    mu: float,
    tau: float,
    mass: np.ndarray,
    eigenvalues: np.ndarray,
    shift: float = 0.0,
    dt: Optional[float] = None,
    factor: Optional[GramianFactor] = None,
    window: Optional[int] = None,
) -> HumControl:
    """
    Steer the projected deterministic system from x0 to zero at minimal L2 cost.

    Only the coordinates of x0 on the modes with lambda_k <= mu are steered.

    Raises:
        GramianConditioningError: If the Gramian cannot be factorised.
    """
    x0 = np.asarray(x0, dtype=float)
    m = low_mode_count(eigenvalues, mu)
    rates = np.asarray(eigenvalues[:m]) - shift
    if m == 0 or not np.any(x0[:m]):
        return HumControl(np.zeros(m), rates, tau, x0.shape[0], 0.0)
    if factor is None:
        factor = factorize(hum_gramian(mu, tau, mass, eigenvalues, shift, dt), window)
    rhs = _steering_rhs(x0[:m], rates, tau, dt)
    eta = factor.solve(rhs)
    defect = factor.gramian @ eta - rhs
    if dt is not None:
        z = rates * dt
        defect = defect * np.divide(np.expm1(z), z, out=np.ones_like(z), where=z != 0)
    cost = float(eta @ factor.gramian @ eta)
    return HumControl(
        eta,
        rates,
        tau,
        x0.shape[0],
        max(cost, 0.0),
        float(np.linalg.norm(defect)),
        factor.condition,
        factor.regularized,
    )


def observability_constant(
    mu: float, tau: float, mass: np.ndarray, eigenvalues: np.ndarray, shift: float = 0.0
) -> float:
    """
    Sharp constant kappa in ||z(0)||^2 <= kappa int_0^tau int_{D0} |z|^2 on the projected modes.

    kappa is the largest generalised eigenvalue of the pair (exp(-2 Lambda tau), G).

    Raises:
        GramianConditioningError: If the Gramian is not positive definite.
    """
    gramian = hum_gramian(mu, tau, mass, eigenvalues, shift)
    rates = np.asarray(eigenvalues[: gramian.shape[0]]) - shift
    try:
        spectrum = linalg.eigh(np.diag(np.exp(-2 * rates * tau)), gramian, eigvals_only=True)
    except linalg.LinAlgError as exc:
        raise GramianConditioningError(
            f"observability pencil is singular: {exc}", float(np.linalg.cond(gramian))
        )
    return float(spectrum[-1])


@lru_cache(maxsize=128)
def _window_factor(model: HeatModel, n_low: int, n_steps: int, dt: float) -> GramianFactor:
    mu = float(model.grid.eigenvalues[n_low - 1])
    return factorize(hum_gramian(mu, n_steps * dt, model.mass, model.grid.eigenvalues, model.shift, dt))


@dataclass(frozen=True)
class WindowReport:
    index: int
    start: float
    stop: float
    cutoff: float
    n_low: int
    cost: float
    residual: float
    condition: float
    regularized: bool


@dataclass(frozen=True)
class LRResult:
    """
    Outcome of lr_null_control.

    Attributes:
        control (ControlSignal): Glued control on the whole path grid.
        trajectory (Trajectory): Controlled trajectory on the schedule interval.
        windows (List[WindowReport]): One report per active window.
        terminal_norm (float): L2 norm of the state at the end of the schedule.
        converged (bool): Whether the terminal norm is within tolerance.
    """

    control: ControlSignal
    trajectory: Trajectory
    windows: List[WindowReport] = field(default_factory=list)
    terminal_norm: float = 0.0
    converged: bool = True


def steer_window(
    x0: np.ndarray,
    model: HeatModel,
    path: BrownianPath,
    start: int,
    stop: int,
    mu: Optional[float] = None,
    window: Optional[int] = None,
) -> Tuple[np.ndarray, HumControl]:
    """
    Adapted control steering the modes below mu from x0 at node start to zero at node stop.

    The HUM control of the transformed system is mapped back by the relative
    factor E(t_n) / E(t_start), which only uses the path up to t_n.

    Returns:
        Tuple[np.ndarray, HumControl]: Coefficients for the nodes start..stop (last row zero)
        and the transformed-system control.
    """
    eigenvalues = model.grid.eigenvalues
    mu = float(eigenvalues[-1]) if mu is None else mu
    n_low = low_mode_count(eigenvalues, mu)
    n_steps = stop - start
    coefficients = np.zeros((n_steps + 1, model.grid.n_modes))
    if n_low == 0:
        return coefficients, HumControl(np.zeros(0), np.zeros(0), n_steps * path.dt, x0.shape[0], 0.0)
    try:
        factor = _window_factor(model, n_low, n_steps, path.dt)
    except GramianConditioningError as exc:
        raise GramianConditioningError(str(exc.detail), exc.condition, window)
    tau = n_steps * path.dt
    hum = hum_control(
        x0, mu, tau, model.mass, eigenvalues, model.shift, path.dt, factor=factor, window=window
    )
    factors = exp_factors(path, model.a)[start:stop]
    coefficients[:-1] = hum.at(np.arange(n_steps) * path.dt) * (factors / factors[0])[:, None]
    return coefficients, hum


def lr_null_control(
    y0: np.ndarray,
    model: HeatModel,
    path: BrownianPath,
    schedule: LRSchedule,
    terminal_tol: float = DEFAULT_TERMINAL_TOL,
) -> LRResult:
    """
    Lebeau-Robbiano null control of the linear equation along one path.

    Active windows steer the modes below mu_k to zero with the adapted HUM
    control; passive windows let the dissipation act. Window boundaries are
    snapped to the path grid and windows shorter than one step are skipped.

    Params:
        y0 (np.ndarray): Initial coefficients at schedule.start.
        model (HeatModel): Linear dynamics.
        path (BrownianPath): Driving path.
        schedule (LRSchedule): Window schedule.
        terminal_tol (float): Relative tolerance on the terminal L2 norm.

    Raises:
        GramianConditioningError: If a window Gramian cannot be factorised.
    """
    y0 = np.asarray(y0, dtype=float)
    first, last = window_indices(path, (schedule.start, schedule.end))
    coefficients = np.zeros((path.n_steps + 1, model.grid.n_modes))
    pieces: List[Trajectory] = []
    reports: List[WindowReport] = []
    blocks: List[Tuple[int, int]] = []
    state, cursor = y0, first

    def run(until: int) -> None:
        nonlocal state, cursor
        if until <= cursor:
            return
        signal = ControlSignal(coefficients, path.dt)
        piece = solve_linear(
            state, model, path, signal, window=(path.times[cursor], path.times[until])
        )
        pieces.append(piece)
        state, cursor = piece.coefficients[-1], until

    for k, (a_k, end_k) in enumerate(schedule.active_windows()):
        start = max(int(round(a_k / path.dt)), cursor)
        stop = min(int(round(end_k / path.dt)), last)
        if stop <= start:
            logger.debug("window %d shorter than one step, skipped", k)
            continue
        run(start)
        block, hum = steer_window(state, model, path, start, stop, schedule.cutoffs[k], k)
        coefficients[start:stop] = block[:-1]
        blocks.append((start, stop))
        run(stop)
        reference = max(np.linalg.norm(pieces[-1].coefficients[0]), np.finfo(float).tiny)
        residual = float(np.linalg.norm(state[: hum.n_low])) / reference
        reports.append(
            WindowReport(
                k,
                float(path.times[start]),
                float(path.times[stop]),
                float(schedule.cutoffs[k]),
                hum.n_low,
                hum.cost,
                residual,
                hum.condition,
                hum.regularized,
            )
        )
        logger.debug("window %d: %d modes, cost %.3g, residual %.3g", k, hum.n_low, hum.cost, residual)
    run(last)
    control = ControlSignal.build(coefficients, path.dt, model.mass, blocks)
    trajectory = Trajectory.concatenate(pieces)
    terminal = float(np.linalg.norm(trajectory.coefficients[-1]))
    converged = terminal <= terminal_tol * max(float(np.linalg.norm(y0)), np.finfo(float).tiny)
    if not converged:
        logger.warning(
            "terminal norm %.3g above tolerance %.1g x ||y0|| (path %d)",
            terminal,
            terminal_tol,
            path.path_index,
        )
    return LRResult(control, trajectory, reports, terminal, converged)


@dataclass(frozen=True)
class CostFit:
    """
    Least-squares fit log cost = c0 + c1 / T.

    Attributes:
        c0 (float): Intercept.
        c1 (float): Slope in 1/T.
        r2 (float): Coefficient of determination.
        M_cost (float): max(exp(c0), c1), the constant M with cost <= M exp(M / T).
    """

    c0: float
    c1: float
    r2: float
    M_cost: float


@dataclass(frozen=True)
class CostPoint:
    T: float
    n_paths: int
    cost_median: float
    cost_q25: float
    cost_q75: float
    terminal_norm_median: float
    M_spec: float = DEFAULT_M_SPEC


def fit_cost_curve(horizons: Sequence[float], costs: Sequence[float]) -> CostFit:
    """
    Fit log cost against 1/T.

    Raises:
        DomainError: If fewer than 3 horizons are given or a cost is not positive.
    """
    horizons = np.asarray(horizons, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if horizons.shape[0] < 3:
        raise DomainError("the cost fit needs at least 3 horizons")
    if np.any(costs <= 0):
        raise DomainError("costs must be positive to fit their logarithm")
    fit = stats.linregress(1.0 / horizons, np.log(costs))
    return CostFit(
        float(fit.intercept),
        float(fit.slope),
        float(fit.rvalue**2),
        float(max(np.exp(fit.intercept), fit.slope)),
    )


def estimate_cost_constant(
    horizons: Sequence[float],
    n_paths: int,
    y0: np.ndarray,
    model: HeatModel,
    dt: float,
    seed: int = 0,
    M_spec: float = DEFAULT_M_SPEC,
    k_max: int = DEFAULT_K_MAX,
) -> Tuple[List[CostPoint], CostFit]:
    """
    Control cost of lr_null_control against the horizon, and the fit of C e^{C/T}.

    The base cutoff grows like T^-2 across the sweep: horizon T runs with
    M_spec (T_max / T)^2, so the longest horizon keeps M_spec.

    Raises:
        DomainError: If fewer than 3 horizons are given or one lies outside (0, 1].
    """
    if len(horizons) < 3:
        raise DomainError("the cost fit needs at least 3 horizons")
    if any(not 0 < T <= 1 for T in horizons):
        raise DomainError("cost horizons must lie in (0, 1]")
    longest = max(horizons)
    points = []
    for T in sorted(horizons):
        cutoff = M_spec * (longest / T) ** 2
        schedule = build_lr_schedule(T, cutoff, k_max)
        costs, terminals = [], []
        for i in range(n_paths):
            result = lr_null_control(y0, model, sample_path(seed, dt, T, i), schedule)
            costs.append(result.control.cost)
            terminals.append(result.terminal_norm)
        q25, median, q75 = np.percentile(costs, [25, 50, 75])
        points.append(
            CostPoint(T, n_paths, float(median), float(q25), float(q75), float(np.median(terminals)), cutoff)
        )
        logger.info("cost curve: T=%g M_spec=%g median cost %.6g", T, cutoff, median)
    fit = fit_cost_curve([p.T for p in points], [p.cost_median for p in points])
    return points, fit


@dataclass(frozen=True)
class ObservabilityCurve:
    cutoffs: np.ndarray
    kappas: np.ndarray
    slope: float
    intercept: float
    r2: float


def observability_curve(
    tau: float, n_cutoffs: int, mass: np.ndarray, eigenvalues: np.ndarray, shift: float = 0.0
) -> ObservabilityCurve:
    """Fit log kappa(mu, tau) against sqrt(mu) over the cutoffs lambda_1..lambda_n."""
    if not 2 <= n_cutoffs <= eigenvalues.shape[0]:
        raise DomainError(f"need between 2 and {eigenvalues.shape[0]} cutoffs, got {n_cutoffs}")
    cutoffs = np.asarray(eigenvalues[:n_cutoffs], dtype=float)
    kappas = np.array([observability_constant(mu, tau, mass, eigenvalues, shift) for mu in cutoffs])
    fit = stats.linregress(np.sqrt(cutoffs), np.log(kappas))
    return ObservabilityCurve(cutoffs, kappas, float(fit.slope), float(fit.intercept), float(fit.rvalue**2))
