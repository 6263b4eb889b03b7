"""
Scripted Monte Carlo experiments.

asymptotics   bias, empirical and asymptotic variance of OLS / MRI / MLR on
              HAR-Ito data as T grows
error-bound   MLR estimation error against sqrt(d_M / T), and the adjusted
              error against T^{3/2} / m^{1/4} under measurement noise
convergence   PGD error curves for several running ranks and intraday counts

Every replication draws from its own seed, derived from the master seed and
the replication's (configuration, index) key, so reports do not depend on
the number of threads.
"""

import contextvars
import dataclasses
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
import pandas as pd
from scipy import optimize, stats

from ..platform.logging import get_logger, with_run_id
from .diffusion_sim import (
    DiffusionSpec,
    RealizedPanel,
    center_and_transform,
    realized_volatility,
    simulate,
)
from .errors import InvalidSpecError, MlrHarError, log_event
from .estimators import (
    REFERENCE_STEP_SIZE,
    Method,
    PgdConfig,
    asymptotic_covariance_from_moments,
    build_design,
    fit_mlr,
    fit_mri,
    fit_ols,
    parameter_count,
    sample_moments,
)
from .feature_flags import FeatureFlag, is_feature_enabled
from .har_model import (
    InnovationSpec,
    VarCoefficients,
    build_uc,
    check_stationarity,
    generate_var,
    high_to_low_frequency,
    rho_functions,
)
from .tensor_core import (
    Tensor3,
    TuckerFactors,
    hosvd,
    left_singular_vectors,
    mode_multiply,
)

logger = get_logger(__name__)

T_ = TypeVar("T_")
R_ = TypeVar("R_")

ASYMPTOTICS = "asymptotics"
ERROR_BOUND = "error-bound"
CONVERGENCE = "convergence"
EXPERIMENTS = (ASYMPTOTICS, ERROR_BOUND, CONVERGENCE)

ESTIMATORS = (Method.OLS, Method.MRI, Method.MLR)
MAX_COEFFICIENT_DRAWS = 100


@dataclass(frozen=True)
class HarItoDesign:
    """Shared parameters of the HAR-Ito data generating process."""

    n_assets: int = 5
    n_lags: int = 22
    omega: float = 0.2
    v: float = 0.4
    leverage: float = -0.6
    target_radius: float = 0.7
    spec_seed: int = 20240501


@dataclass(frozen=True)
class AsymptoticsConfig:
    process: HarItoDesign = field(default_factory=HarItoDesign)
    sample_sizes: tuple[int, ...] = (1000, 1500, 2000, 2500, 3000)
    intraday_counts: tuple[int, ...] = (78, 780)
    steps_per_day: int = 780
    replications: int = 200
    ranks: tuple[int, int, int] = (2, 2, 3)
    step_size: float | None = None
    reference_step: bool = False
    tolerance: float = 1e-7
    max_iterations: int = 1000
    threads: int = 1


@dataclass(frozen=True)
class ErrorBoundConfig:
    dimensions: tuple[int, ...] = (10, 20, 25)
    rank_settings: tuple[tuple[int, int, int], ...] = ((2, 2, 2), (3, 3, 3))
    sample_sizes: tuple[int, ...] = (400, 700, 1100, 1600, 2200)
    noise_sample_sizes: tuple[int, ...] = (100, 150, 200, 250, 300)
    include_noise_process: bool = True
    n_lags: int = 22
    core_norm: float = 0.5
    replications: int = 100
    step_size: float | None = None
    reference_step: bool = False
    tolerance: float = 1e-7
    max_iterations: int = 1000
    threads: int = 1
    spec_seed: int = 20240502


@dataclass(frozen=True)
class ConvergenceConfig:
    process: HarItoDesign = field(default_factory=lambda: HarItoDesign(n_assets=30))
    n_days: int = 1000
    intraday_counts: tuple[int, ...] = (78, 390, 780)
    steps_per_day: int = 780
    ranks: tuple[int, int, int] = (2, 2, 3)
    running_ranks: tuple[tuple[int, int, int], ...] = ((2, 2, 3), (5, 5, 5), (10, 10, 10))
    iterations: int = 20
    step_size: float | None = None
    reference_step: bool = False
    replications: int = 1
    threads: int = 1


@dataclass
class ExperimentReport:
    """
    Summary table plus optional linear fits and per-curve series.

    Each row records the configuration it summarizes and the replication
    range (master_seed, first_replication, last_replication) it was drawn from.
    """

    experiment: str
    rows: list[dict[str, Any]]
    replications: int
    master_seed: int
    curves: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    fits: list[dict[str, Any]] = field(default_factory=list)
    failures: int = 0
    config: dict[str, Any] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def fits_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.fits)

    def curve_frame(self, name: str) -> pd.DataFrame:
        return pd.DataFrame(self.curves[name], columns=["x", "y"])

    def write_tables(self, out_dir: Path) -> list[Path]:
        """summary.csv, fits.csv when present, and one curve_<name>.csv per curve."""
        out_dir.mkdir(parents=True, exist_ok=True)
        written = [out_dir / "summary.csv"]
        self.to_frame().to_csv(written[0], index=False)
        if self.fits:
            written.append(out_dir / "fits.csv")
            self.fits_frame().to_csv(written[-1], index=False)
        for name in sorted(self.curves):
            path = out_dir / f"curve_{name}.csv"
            self.curve_frame(name).to_csv(path, index=False)
            written.append(path)
        return written


def replication_seed(master_seed: int, config_index: int, replication: int) -> int:
    """Seed of one replication, a pure function of (master seed, configuration, index)."""
    sequence = np.random.SeedSequence(master_seed, spawn_key=(config_index, replication))
    return int(sequence.generate_state(1)[0])


def experiment_step_size(
    config: AsymptoticsConfig | ErrorBoundConfig | ConvergenceConfig,
) -> float | None:
    """
    PGD step of an experiment: the fixed REFERENCE_STEP_SIZE when
    ``reference_step`` is set, otherwise ``step_size`` (None means the 2 / (3 L) default).
    """
    if config.reference_step:
        if config.step_size is not None and config.step_size != REFERENCE_STEP_SIZE:
            raise InvalidSpecError(
                "reference_step and step_size are exclusive",
                hint="Drop step_size or set reference_step to false",
            )
        return REFERENCE_STEP_SIZE
    return config.step_size


def _run_all(func: Callable[[T_], R_], items: Sequence[T_], threads: int) -> list[R_]:
    """Map over independent work items, in order, optionally on a thread pool."""
    parallel = is_feature_enabled(FeatureFlag.PARALLEL_REPLICATIONS)
    if threads <= 1 or len(items) <= 1 or not parallel:
        return [func(item) for item in items]
    contexts = [contextvars.copy_context() for _ in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pairs = zip(contexts, items, strict=True)
        return list(pool.map(lambda pair: pair[0].run(func, pair[1]), pairs))


def _scaled_lag_tensor(base: np.ndarray, scale: float) -> np.ndarray:
    alpha = scale * base
    rho = rho_functions(alpha[:, :, 0])
    gain = np.atleast_2d(rho.rho1) - np.atleast_2d(rho.rho2)
    return np.einsum("ik,kjl->ijl", gain, alpha)


def _companion_radius(lags: np.ndarray) -> float:
    return check_stationarity(VarCoefficients(Tensor3(lags))).spectral_radius


def har_ito_spec(design: HarItoDesign = HarItoDesign()) -> DiffusionSpec:
    """
    HAR-Ito diffusion whose daily VAR has Tucker ranks (2, 2, 3).

    The lag matrices are alpha_l = sum_k U_C[l, k] L M_k R^T with N x 2 factors
    L, R and 2 x 2 mixing matrices M_k, all with entries uniform on (0.2, 1).
    The common scale is chosen so the companion matrix of the implied daily
    VAR has spectral radius ``target_radius``.
    """
    n, p = design.n_assets, design.n_lags
    if n < 2:
        raise InvalidSpecError("the rank-(2, 2, 3) design needs at least two assets")
    if not 0 < design.target_radius < 1:
        raise InvalidSpecError("target_radius must lie in (0, 1)")
    rng = np.random.default_rng(design.spec_seed)
    left = rng.uniform(0.2, 1.0, (n, 2))
    right = rng.uniform(0.2, 1.0, (n, 2))
    slices = np.stack([left @ rng.uniform(0.2, 1.0, (2, 2)) @ right.T for _ in range(3)], axis=2)
    base = mode_multiply(Tensor3(slices), build_uc(month=p), 3).data

    limit = 0.999 / float(np.max(np.abs(np.linalg.eigvals(base[:, :, 0]))))

    def gap(scale: float) -> float:
        return _companion_radius(_scaled_lag_tensor(base, scale)) - design.target_radius

    if gap(limit) < 0:
        raise InvalidSpecError(
            f"companion radius {design.target_radius} is out of reach for this draw",
            hint="Lower target_radius or change spec_seed",
        )
    scale = optimize.brentq(gap, 1e-12, limit, xtol=1e-14)
    eye = np.eye(n)
    return DiffusionSpec(
        omega=np.full(n, design.omega),
        alpha=scale * base,
        v=np.full(n, design.v),
        rho=design.leverage * eye,
    )


def random_tucker_coefficients(
    n: int, p: int, ranks: Sequence[int], core_norm: float, seed: int
) -> TuckerFactors:
    """
    Gaussian core rescaled to ``core_norm`` with factors from Gaussian matrices.

    Draws are repeated until the VAR is stationary.
    """
    rng = np.random.default_rng(seed)
    dims = (n, n, p)
    for _ in range(MAX_COEFFICIENT_DRAWS):
        core = rng.standard_normal(tuple(ranks))
        core *= core_norm / np.linalg.norm(core)
        factors = tuple(
            left_singular_vectors(rng.standard_normal((d, d)), r)
            for d, r in zip(dims, ranks, strict=True)
        )
        tucker = TuckerFactors(Tensor3(core), factors)  # type: ignore[arg-type]
        if check_stationarity(VarCoefficients(tucker.reconstruct())).stationary:
            return tucker
    raise InvalidSpecError(f"no stationary coefficient draw in {MAX_COEFFICIENT_DRAWS} attempts")


def _bias_variance(estimates: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """Squared mean absolute bias of the average estimate, top eigenvalue of the covariance."""
    bias = float(np.mean(np.abs(estimates.mean(axis=0) - truth)))
    if estimates.shape[0] < 2:
        return bias**2, float("nan")
    cov = np.cov(estimates, rowvar=False)
    return bias**2, float(np.linalg.eigvalsh(cov)[-1])


def _fit_three(panel: RealizedPanel, config: AsymptoticsConfig, n_lags: int) -> dict[str, Any]:
    """Vec estimate and max eigenvalue of the estimated AVar, per estimator."""
    design = build_design(panel, n_lags)
    ols = fit_ols(design)
    mri = fit_mri(design, config.ranks[1])
    mlr = fit_mlr(
        design,
        PgdConfig(
            ranks=config.ranks,
            step_size=experiment_step_size(config),
            tolerance=config.tolerance,
            max_iterations=config.max_iterations,
        ),
    )
    gamma_hat, sigma_hat = sample_moments(design)
    out: dict[str, Any] = {}
    for method, fit in ((Method.OLS, ols), (Method.MRI, mri), (Method.MLR, mlr)):
        tucker = hosvd(fit.tensor, config.ranks) if method is Method.MLR else None
        avar = asymptotic_covariance_from_moments(
            gamma_hat, sigma_hat, method, tensor=fit.tensor, tucker=tucker, r2=config.ranks[1]
        )
        out[method.value] = (fit.tensor.vec(), float(np.linalg.eigvalsh(avar)[-1]))
    return out


def _asymptotics_replication(
    spec: DiffusionSpec,
    config: AsymptoticsConfig,
    n_days: int,
    seed: int,
    t_index: int,
    rep: int,
) -> dict[int, dict[str, Any]] | None:
    try:
        hf = simulate(spec, n_days, config.steps_per_day, replication_seed(seed, t_index, rep))
        return {
            m: _fit_three(
                center_and_transform(realized_volatility(hf, m)), config, config.process.n_lags
            )
            for m in config.intraday_counts
        }
    except (MlrHarError, np.linalg.LinAlgError) as e:
        log_event(
            "warning",
            "replication_failed",
            {"experiment": ASYMPTOTICS, "T": n_days, "replication": rep, "error": str(e)},
        )
        return None


@with_run_id
def experiment_asymptotics(config: AsymptoticsConfig, seed: int) -> ExperimentReport:
    """
    Bias^2, EVar and AVar / T of the three estimators for every (T, m).

    One high-frequency path per (T, replication) serves every m, so the m
    comparison is paired.
    """
    if config.replications < 2:
        raise InvalidSpecError("experiment asymptotics needs at least 2 replications")
    spec = har_ito_spec(config.process)
    truth = high_to_low_frequency(spec).tensor.vec()
    for m in config.intraday_counts:
        if config.steps_per_day % m:
            raise InvalidSpecError(f"m={m} must divide steps_per_day={config.steps_per_day}")

    rows: list[dict[str, Any]] = []
    failures = 0
    for t_index, n_days in enumerate(config.sample_sizes):
        replicate = partial(_asymptotics_replication, spec, config, n_days, seed, t_index)
        results = _run_all(replicate, list(range(config.replications)), config.threads)
        done = [r for r in results if r is not None]
        failures += len(results) - len(done)
        logger.info(
            f"T={n_days}: {len(done)} of {config.replications} replications",
            experiment=ASYMPTOTICS,
            action="configuration_done",
        )
        for m in config.intraday_counts:
            for method in ESTIMATORS:
                estimates = np.array([r[m][method.value][0] for r in done])
                avars = np.array([r[m][method.value][1] for r in done])
                bias_sq, evar = (
                    _bias_variance(estimates, truth) if done else (float("nan"), float("nan"))
                )
                rows.append(
                    {
                        "T": n_days,
                        "m": m,
                        "method": method.value,
                        "bias_sq": bias_sq,
                        "evar": evar,
                        "avar": float(np.mean(avars)) / n_days if done else float("nan"),
                        "replications": len(done),
                        "failures": len(results) - len(done),
                        "master_seed": seed,
                        "config_index": t_index,
                        "first_replication": 0,
                        "last_replication": config.replications - 1,
                    }
                )
    return ExperimentReport(
        experiment=ASYMPTOTICS,
        rows=rows,
        replications=config.replications,
        master_seed=seed,
        failures=failures,
        config=dataclasses.asdict(config),
    )


def _linear_fit(x: Sequence[float], y: Sequence[float], label: dict[str, Any]) -> dict[str, Any]:
    result = stats.linregress(x, y)
    return {
        **label,
        "slope": float(result.slope),
        "intercept": float(result.intercept),
        "r_squared": float(result.rvalue**2),
    }


def _error_bound_replication(
    coeffs: VarCoefficients,
    pgd: PgdConfig,
    n_days: int,
    noise_m: int | None,
    seed: int,
    config_index: int,
    rep: int,
) -> float | None:
    try:
        panel = generate_var(
            coeffs,
            InnovationSpec.identity(coeffs.n_assets),
            n_days,
            replication_seed(seed, config_index, rep),
            measurement_noise_m=noise_m,
        )
        fit = fit_mlr(build_design(panel, coeffs.n_lags), pgd)
        return (fit.tensor - coeffs.tensor).norm()
    except (MlrHarError, np.linalg.LinAlgError) as e:
        log_event(
            "warning",
            "replication_failed",
            {"experiment": ERROR_BOUND, "N": coeffs.n_assets, "T": n_days, "error": str(e)},
        )
        return None


@with_run_id
def experiment_error_bound(config: ErrorBoundConfig, seed: int) -> ExperimentReport:
    """
    MLR estimation error on directly simulated VAR data.

    Process 1 has no measurement error and is summarized against
    sqrt(d_M / T). Process 2 adds N(0, m^{-1/2} I) noise with m = T^4 and
    summarizes the adjusted error sqrt(T / d_M) ||A_hat - A||_F against
    T^{3/2} / m^{1/4}. Each (process, N, ranks) line gets a least squares fit.
    """
    if config.replications < 2:
        raise InvalidSpecError("experiment error-bound needs at least 2 replications")
    p = config.n_lags
    processes: list[tuple[int, tuple[int, ...]]] = [(1, config.sample_sizes)]
    if config.include_noise_process:
        processes.append((2, config.noise_sample_sizes))

    rows: list[dict[str, Any]] = []
    fits: list[dict[str, Any]] = []
    curves: dict[str, list[tuple[float, float]]] = {}
    failures = 0
    config_index = 0
    for n_index, n in enumerate(config.dimensions):
        for r_index, ranks in enumerate(config.rank_settings):
            tucker = random_tucker_coefficients(
                n, p, ranks, config.core_norm, config.spec_seed + 100 * n_index + r_index
            )
            coeffs = VarCoefficients(tucker.reconstruct())
            d_m = parameter_count(n, p, ranks)
            rank_label = "x".join(map(str, ranks))
            pgd = PgdConfig(
                ranks=ranks,
                step_size=experiment_step_size(config),
                tolerance=config.tolerance,
                max_iterations=config.max_iterations,
            )
            for process, sizes in processes:
                xs: list[float] = []
                ys: list[float] = []
                for n_days in sizes:
                    noise_m = n_days**4 if process == 2 else None
                    replicate = partial(
                        _error_bound_replication, coeffs, pgd, n_days, noise_m, seed, config_index
                    )
                    results = _run_all(replicate, list(range(config.replications)), config.threads)
                    errors = np.array([e for e in results if e is not None])
                    failures += len(results) - errors.size
                    error = float(np.mean(errors)) if errors.size else float("nan")
                    adjusted = float(np.sqrt(n_days / d_m)) * error
                    if noise_m is None:
                        xs.append(float(np.sqrt(d_m / n_days)))
                        ys.append(error)
                    else:
                        xs.append(n_days**1.5 / float(noise_m) ** 0.25)
                        ys.append(adjusted)
                    rows.append(
                        {
                            "process": process,
                            "N": n,
                            "ranks": rank_label,
                            "T": n_days,
                            "m": noise_m,
                            "d_M": d_m,
                            "x": xs[-1],
                            "error": error,
                            "adjusted_error": adjusted,
                            "replications": int(errors.size),
                            "failures": len(results) - int(errors.size),
                            "master_seed": seed,
                            "config_index": config_index,
                            "first_replication": 0,
                            "last_replication": config.replications - 1,
                        }
                    )
                    config_index += 1
                label = f"p{process}_N{n}_r{rank_label}"
                curves[label] = list(zip(xs, ys, strict=True))
                if len(xs) > 2 and np.all(np.isfinite(ys)):
                    label_fields = {"process": process, "N": n, "ranks": rank_label}
                    fits.append(_linear_fit(xs, ys, label_fields))
                logger.info(
                    f"{label}: {', '.join(f'{y:.4g}' for y in ys)}",
                    experiment=ERROR_BOUND,
                    action="line_done",
                )
    return ExperimentReport(
        experiment=ERROR_BOUND,
        rows=rows,
        replications=config.replications,
        master_seed=seed,
        curves=curves,
        fits=fits,
        failures=failures,
        config=dataclasses.asdict(config),
    )


def _curve_name(m: int, running: Sequence[int]) -> str:
    return f"m{m}_r{'x'.join(map(str, running))}"


class _ErrorTrace:
    """PGD callback collecting ||A_k - A||_F / ||A||_F for k >= 1."""

    def __init__(self, truth: Tensor3):
        self.truth = truth
        self.scale = truth.norm()
        self.errors: list[float] = []

    def __call__(self, k: int, tensor: Tensor3) -> None:
        if k > 0:
            self.errors.append((tensor - self.truth).norm() / self.scale)


def _convergence_replication(
    spec: DiffusionSpec, truth: Tensor3, config: ConvergenceConfig, seed: int, rep: int
) -> dict[str, list[float]]:
    hf = simulate(spec, config.n_days, config.steps_per_day, replication_seed(seed, 0, rep))
    out: dict[str, list[float]] = {}
    for m in config.intraday_counts:
        design = build_design(
            center_and_transform(realized_volatility(hf, m)), config.process.n_lags
        )
        for running in config.running_ranks:
            trace = _ErrorTrace(truth)
            fit_mlr(
                design,
                PgdConfig(
                    ranks=config.ranks,
                    running_ranks=running,
                    step_size=experiment_step_size(config),
                    max_iterations=config.iterations,
                    tolerance=0.0,
                ),
                callback=trace,
            )
            out[_curve_name(m, running)] = trace.errors
    return out


@with_run_id
def experiment_convergence(config: ConvergenceConfig, seed: int) -> ExperimentReport:
    """
    ||A_k - A||_F / ||A||_F over the first iterations of PGD, one curve per (m, running ranks).

    Each replication simulates a single high-frequency sample and forms RV at
    every m from it. Curves average over replications.
    """
    if config.replications < 1:
        raise InvalidSpecError("experiment convergence needs at least 1 replication")
    spec = har_ito_spec(config.process)
    truth = high_to_low_frequency(spec).tensor
    for m in config.intraday_counts:
        if config.steps_per_day % m:
            raise InvalidSpecError(f"m={m} must divide steps_per_day={config.steps_per_day}")

    replicate = partial(_convergence_replication, spec, truth, config, seed)
    results = _run_all(replicate, list(range(config.replications)), config.threads)
    curves: dict[str, list[tuple[float, float]]] = {}
    rows: list[dict[str, Any]] = []
    for m in config.intraday_counts:
        for running in config.running_ranks:
            name = _curve_name(m, running)
            mean_curve = np.mean([r[name] for r in results], axis=0)
            curves[name] = [(float(k + 1), float(e)) for k, e in enumerate(mean_curve)]
            for k, e in enumerate(mean_curve):
                rows.append(
                    {
                        "m": m,
                        "running_ranks": "x".join(map(str, running)),
                        "iteration": k + 1,
                        "rmse": float(e),
                        "replications": len(results),
                        "master_seed": seed,
                        "first_replication": 0,
                        "last_replication": config.replications - 1,
                    }
                )
            logger.info(
                f"{name}: terminal error {mean_curve[-1]:.4g}",
                experiment=CONVERGENCE,
                action="curve_done",
            )
    return ExperimentReport(
        experiment=CONVERGENCE,
        rows=rows,
        replications=config.replications,
        master_seed=seed,
        curves=curves,
        config=dataclasses.asdict(config),
    )
