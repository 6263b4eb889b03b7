"""
Estimators for the vector HAR coefficient tensor.

OLS is unconstrained least squares, MRI restricts the rank of the mode-2
unfolding (a common row space across lags) and MLR restricts all three
Tucker ranks through projected gradient descent. VHAR and VHARI are the
same OLS and MRI fits on the HAR-averaged predictors.
"""

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from functools import cached_property
from itertools import product

import numpy as np
from scipy import linalg, optimize

from .diffusion_sim import RealizedPanel
from .errors import (
    DimensionError,
    InsufficientHistoryError,
    InvalidSpecError,
    MlrHarError,
    NonStationaryError,
    RankDeficiencyError,
    SingularDesignError,
    log_event,
)
from .feature_flags import FeatureFlag, is_feature_enabled
from .har_model import (
    InnovationSpec,
    VarCoefficients,
    build_uc,
    check_stationarity,
    stationary_autocovariance,
)
from .tensor_core import (
    Ranks,
    Tensor3,
    TuckerFactors,
    certify_ranks,
    fold,
    hosvd,
    left_singular_vectors,
    matricize,
    mode_multiply,
    mode_permutation,
    multilinear_ranks,
    project_tucker,
)

logger = logging.getLogger(__name__)

# Fixed PGD step offered to the experiments through reference_step
REFERENCE_STEP_SIZE = 5e-4
DEFAULT_TOLERANCE = 1e-7
DEFAULT_MAX_ITERATIONS = 1000
DEFAULT_BIC_LAMBDA = 1e-4
DEFAULT_RANK_MAX = 10
COLUMN_SPACE_RTOL = 1e-8
GRAM_CONDITION_LIMIT = 1e12
DEFAULT_GRID_SIZE = 720


class Method(str, Enum):
    OLS = "ols"
    MRI = "mri"
    MLR = "mlr"
    VHAR = "vhar"
    VHARI = "vhari"


@dataclass(frozen=True, eq=False)
class RegressionDesign:
    """
    Stacked regression y_n = A_(1) x_n for n = P+1..T.

    responses has one row per n and predictors the matching
    x_n = (y_{n-1}, ..., y_{n-P}), newest lag first.
    """

    responses: np.ndarray
    predictors: np.ndarray
    n_days: int
    n_assets: int
    n_lags: int

    def __post_init__(self) -> None:
        rows = self.responses.shape[0]
        if self.responses.shape != (rows, self.n_assets):
            raise DimensionError(f"responses must have {self.n_assets} columns")
        if self.predictors.shape != (rows, self.n_assets * self.n_lags):
            raise DimensionError(
                f"predictors must be {rows} x {self.n_assets * self.n_lags}, "
                f"got {self.predictors.shape}"
            )

    @property
    def n_obs(self) -> int:
        return int(self.responses.shape[0])

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.n_assets, self.n_assets, self.n_lags)

    @cached_property
    def gram(self) -> np.ndarray:
        """sum_n x_n x_n^T"""
        return self.predictors.T @ self.predictors

    @cached_property
    def cross(self) -> np.ndarray:
        """sum_n y_n x_n^T"""
        return self.responses.T @ self.predictors

    @cached_property
    def response_energy(self) -> float:
        return float(np.sum(self.responses**2))

    def loss_from_unfolding(self, unfolding: np.ndarray) -> float:
        """Loss evaluated from the cached second moments."""
        value = (
            self.response_energy
            - 2.0 * float(np.sum(unfolding * self.cross))
            + float(np.sum(unfolding * (unfolding @ self.gram)))
        )
        return max(value, 0.0) / self.n_days


@dataclass(frozen=True, eq=False)
class FitResult:
    tensor: Tensor3
    method: Method
    ranks: Ranks | None = None
    loss_trace: tuple[float, ...] = ()
    iterations: int = 0
    converged: bool = True
    final_loss: float = float("nan")
    running_loss: float | None = None
    step_size: float | None = None
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, object]:
        """JSON-ready summary without the coefficients."""
        return {
            "method": self.method.value,
            "dims": list(self.tensor.dims),
            "ranks": list(self.ranks) if self.ranks else None,
            "iterations": self.iterations,
            "converged": self.converged,
            "final_loss": self.final_loss,
            "running_loss": self.running_loss,
            "step_size": self.step_size,
            "loss_trace": list(self.loss_trace),
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class PgdConfig:
    """
    Projected gradient descent settings.

    step_size None selects 2 / (3 L) with L = 2 lambda_max(sum x x^T) / T,
    the Lipschitz constant of the loss gradient.
    """

    ranks: Ranks
    running_ranks: Ranks | None = None
    step_size: float | None = None
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    tolerance: float = DEFAULT_TOLERANCE
    initializer: Tensor3 | None = None

    @property
    def effective_running_ranks(self) -> Ranks:
        return self.running_ranks or self.ranks

    def validate(self, dims: tuple[int, int, int]) -> None:
        running = self.effective_running_ranks
        for mode in range(3):
            if not 1 <= self.ranks[mode] <= running[mode] <= dims[mode]:
                raise InvalidSpecError(
                    f"need 1 <= ranks <= running_ranks <= dims per mode, got "
                    f"ranks={self.ranks}, running_ranks={running}, dims={dims}"
                )
        if self.step_size is not None and self.step_size <= 0:
            raise InvalidSpecError("step_size must be positive")
        if self.max_iterations < 1:
            raise InvalidSpecError("max_iterations must be at least 1")
        if self.initializer is not None and self.initializer.dims != dims:
            raise DimensionError(f"initializer dims {self.initializer.dims} != {dims}")


@dataclass(frozen=True)
class DiagnosticsReport:
    kappa_L: float
    kappa_U: float
    mu_min: float
    mu_max: float
    d_M: int
    kappa: float
    grid_size: int
    grid_resolution: float
    suggested_step_size: float

    def to_dict(self) -> dict[str, float | int]:
        return asdict(self)


def parameter_count(n: int, p: int, ranks: Sequence[int]) -> int:
    """Free parameters of the Tucker model: r1 r2 r3 + (N-r1) r1 + (N-r2) r2 + (P-r3) r3."""
    r1, r2, r3 = ranks
    return r1 * r2 * r3 + (n - r1) * r1 + (n - r2) * r2 + (p - r3) * r3


def build_design(panel: RealizedPanel, P: int) -> RegressionDesign:
    """Stack rows n = P+1..T of a centered panel."""
    if not panel.centered:
        raise InvalidSpecError(
            "regression needs a centered panel", hint="Call center_and_transform first"
        )
    if P < 1:
        raise InvalidSpecError("P must be at least 1")
    values = panel.values
    T, n = values.shape
    if T <= P:
        raise InsufficientHistoryError(f"{T} days cannot support {P} lags")
    predictors = np.hstack([values[P - j : T - j] for j in range(1, P + 1)])
    return RegressionDesign(
        responses=np.array(values[P:]),
        predictors=predictors,
        n_days=T,
        n_assets=n,
        n_lags=P,
    )


def _check_tensor(design: RegressionDesign, tensor: Tensor3) -> None:
    if tensor.dims != design.dims:
        raise DimensionError(f"tensor dims {tensor.dims} do not match design {design.dims}")


def loss(design: RegressionDesign, tensor: Tensor3) -> float:
    """(1/T) sum_n ||y_n - A_(1) x_n||^2"""
    _check_tensor(design, tensor)
    residuals = design.responses - design.predictors @ matricize(tensor, 1).T
    return float(np.sum(residuals**2)) / design.n_days


def loss_gradient(design: RegressionDesign, tensor: Tensor3) -> Tensor3:
    """Gradient whose mode-1 unfolding is -(2/T) sum_n (y_n - A_(1) x_n) x_n^T."""
    _check_tensor(design, tensor)
    residuals = design.responses - design.predictors @ matricize(tensor, 1).T
    return fold(-2.0 / design.n_days * (residuals.T @ design.predictors), 1, design.dims)


def _gradient_unfolding(design: RegressionDesign, unfolding: np.ndarray) -> np.ndarray:
    return -2.0 / design.n_days * (design.cross - unfolding @ design.gram)


def _solve_gram(gram: np.ndarray, rhs: np.ndarray, n_obs: int) -> np.ndarray:
    """gram^{-1} rhs for a symmetric positive definite gram, refusing near-singular ones."""
    n_params = gram.shape[0]
    if n_obs < n_params:
        raise SingularDesignError(n_obs, n_params)
    try:
        factor = linalg.cho_factor(gram)
    except linalg.LinAlgError:
        raise SingularDesignError(n_obs, n_params) from None
    condition = float(np.linalg.cond(gram))
    if not np.isfinite(condition) or condition > GRAM_CONDITION_LIMIT:
        raise SingularDesignError(n_obs, n_params, condition)
    return linalg.cho_solve(factor, rhs)


def fit_ols(design: RegressionDesign) -> FitResult:
    """Closed-form least squares sum y x^T (sum x x^T)^{-1}."""
    unfolding = _solve_gram(design.gram, design.cross.T, design.n_obs).T
    tensor = fold(unfolding, 1, design.dims)
    value = loss(design, tensor)
    return FitResult(tensor=tensor, method=Method.OLS, loss_trace=(value,), final_loss=value)


def fit_mri(
    design: RegressionDesign,
    r2: int,
    max_iterations: int = 500,
    tolerance: float = 1e-12,
) -> FitResult:
    """
    Least squares with rank(A_(2)) <= r2, i.e. A_j = H_j U2^T for a shared N x r2 U2.

    Alternating least squares started from the rank-r2 truncation of the OLS
    mode-2 unfolding: the H step is OLS on the index predictors U2^T y_{n-j},
    the U2 step solves the normal equations for vec(U2) given H. Both steps
    are exact minimizations, so the loss never increases and never exceeds
    the loss of the truncated OLS estimate.
    """
    n, p = design.n_assets, design.n_lags
    if not 1 <= r2 <= n:
        raise InvalidSpecError(f"r2 must lie in [1, {n}], got {r2}")
    ols = fit_ols(design)
    if r2 == n:
        return FitResult(
            tensor=ols.tensor,
            method=Method.MRI,
            ranks=(n, n, p),
            loss_trace=ols.loss_trace,
            final_loss=ols.final_loss,
        )

    gram4 = design.gram.reshape(p, n, p, n)
    cross3 = design.cross.reshape(n, p, n)
    eye_p = np.eye(p)
    basis = left_singular_vectors(matricize(ols.tensor, 2), r2)

    def index_step(u2: np.ndarray) -> np.ndarray:
        lift = np.kron(eye_p, u2)
        h = _solve_gram(lift.T @ design.gram @ lift, (design.cross @ lift).T, design.n_obs).T
        return h @ lift.T

    unfolding = index_step(basis)
    trace = [design.loss_from_unfolding(unfolding)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        h = (unfolding @ np.kron(eye_p, basis)).reshape(n, p, r2)
        hth = np.einsum("ijb,ikd->jbkd", h, h)
        normal = np.einsum("jakc,jbkd->abcd", gram4, hth).reshape(n * r2, n * r2)
        rhs = np.einsum("ija,ijb->ab", cross3, h).ravel()
        theta = linalg.lstsq(normal, rhs)[0]
        q, r = linalg.qr(theta.reshape(n, r2), mode="economic")
        if np.min(np.abs(np.diag(r))) <= 1e-12 * max(np.max(np.abs(np.diag(r))), 1e-300):
            logger.warning("MRI index basis lost rank, stopping alternation")
            break
        basis = q
        unfolding = index_step(basis)
        trace.append(design.loss_from_unfolding(unfolding))
        if trace[-2] - trace[-1] <= tolerance * max(trace[-2], 1e-300):
            converged = True
            break

    tensor = fold(unfolding, 1, design.dims)
    final = loss(design, tensor)
    logger.debug(f"MRI r2={r2}: {iterations} alternations, loss {final:.6g}")
    return FitResult(
        tensor=tensor,
        method=Method.MRI,
        ranks=(n, r2, p),
        loss_trace=tuple(trace),
        iterations=iterations,
        converged=converged,
        final_loss=final,
    )


def default_step_size(design: RegressionDesign) -> float:
    """2 / (3 L) with L = 2 lambda_max(sum x x^T) / T."""
    size = design.gram.shape[0]
    top = float(linalg.eigvalsh(design.gram, subset_by_index=[size - 1, size - 1])[0])
    lipschitz = 2.0 * top / design.n_days
    return 1.0 if lipschitz <= 0 else 2.0 / (3.0 * lipschitz)


def fit_mlr(
    design: RegressionDesign,
    config: PgdConfig,
    callback: Callable[[int, Tensor3], None] | None = None,
) -> FitResult:
    """
    Projected gradient descent onto Tucker ranks.

    Each iteration takes a gradient step and projects onto the running ranks;
    the final iterate is projected once more onto the target ranks. Stops
    after max_iterations or when ||A_k - A_{k-1}||_F < tolerance. ``callback``
    receives (k, A_k) after every iteration, including k = 0 for the start.
    """
    dims = design.dims
    config.validate(dims)
    running = config.effective_running_ranks
    eta = config.step_size if config.step_size is not None else default_step_size(design)
    certify = is_feature_enabled(FeatureFlag.RANK_CERTIFICATION)

    current = config.initializer or Tensor3.zeros(dims)
    unfolding = np.array(matricize(current, 1))
    trace = [design.loss_from_unfolding(unfolding)]
    if callback:
        callback(0, current)

    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        stepped = fold(unfolding - eta * _gradient_unfolding(design, unfolding), 1, dims)
        current = project_tucker(stepped, running)
        if certify and not certify_ranks(current, running):
            raise RankDeficiencyError(
                f"iterate {iterations} has multilinear ranks {multilinear_ranks(current)} "
                f"above running ranks {running}"
            )
        updated = np.array(matricize(current, 1))
        change = float(np.linalg.norm(updated - unfolding))
        unfolding = updated
        trace.append(design.loss_from_unfolding(unfolding))
        if callback:
            callback(iterations, current)
        if change < config.tolerance:
            converged = True
            break

    warnings: list[str] = []
    if not converged:
        warnings.append(f"no convergence within {config.max_iterations} iterations")
        logger.warning(
            f"PGD stopped at max_iterations={config.max_iterations} for ranks {config.ranks}"
        )
    increases = np.diff(trace) > 1e-10 * max(abs(trace[0]), 1.0)
    if np.any(increases):
        converged = False
        first = int(np.argmax(increases)) + 1
        warnings.append(f"loss increased at iteration {first}")
        logger.warning(f"PGD loss increased at iteration {first} (step size {eta:.3g})")

    running_loss = loss(design, current)
    final_tensor = current
    if tuple(config.ranks) != tuple(running):
        final_tensor = project_tucker(current, config.ranks)
    final = loss(design, final_tensor)
    logger.debug(
        f"PGD ranks={config.ranks} running={running}: {iterations} iterations, "
        f"loss {final:.6g}, converged={converged}"
    )
    return FitResult(
        tensor=final_tensor,
        method=Method.MLR,
        ranks=tuple(config.ranks),  # type: ignore[arg-type]
        loss_trace=tuple(trace),
        iterations=iterations,
        converged=converged,
        final_loss=final,
        running_loss=running_loss,
        step_size=eta,
        warnings=tuple(warnings),
    )


def reduce_design(design: RegressionDesign, U3: np.ndarray) -> RegressionDesign:
    """Replace the P lags by the r3 temporal components sum_j U3[j, k] y_{n-j}."""
    basis = np.atleast_2d(np.asarray(U3, dtype=float))
    if basis.shape[0] != design.n_lags:
        raise DimensionError(f"temporal basis needs {design.n_lags} rows, got {basis.shape[0]}")
    return RegressionDesign(
        responses=design.responses,
        predictors=design.predictors @ np.kron(basis, np.eye(design.n_assets)),
        n_days=design.n_days,
        n_assets=design.n_assets,
        n_lags=basis.shape[1],
    )


def _expand(
    fit: FitResult, design: RegressionDesign, basis: np.ndarray, method: Method
) -> FitResult:
    tensor = mode_multiply(fit.tensor, basis, 3)
    final = loss(design, tensor)
    return FitResult(
        tensor=tensor,
        method=method,
        ranks=fit.ranks,
        loss_trace=fit.loss_trace,
        iterations=fit.iterations,
        converged=fit.converged,
        final_loss=final,
    )


def fit_vhar(design: RegressionDesign, U3: np.ndarray | None = None) -> FitResult:
    """Vector HAR: OLS on daily/weekly/monthly averages (3 N^2 coefficients)."""
    basis = build_uc(month=design.n_lags) if U3 is None else np.asarray(U3, dtype=float)
    return _expand(fit_ols(reduce_design(design, basis)), design, basis, Method.VHAR)


def fit_vhari(design: RegressionDesign, r: int, U3: np.ndarray | None = None) -> FitResult:
    """Vector HAR index model: rank-r common row space on the HAR averages."""
    basis = build_uc(month=design.n_lags) if U3 is None else np.asarray(U3, dtype=float)
    return _expand(fit_mri(reduce_design(design, basis), r), design, basis, Method.VHARI)


def fit_by_method(
    design: RegressionDesign,
    method: Method | str,
    ranks: Sequence[int] | None = None,
    r2: int | None = None,
    pgd: PgdConfig | None = None,
    temporal_basis: np.ndarray | None = None,
) -> FitResult:
    """Dispatch to one estimator; MRI and VHARI default r2 to ranks[1]."""
    method = Method(method)
    if method is Method.OLS:
        return fit_ols(design)
    if method is Method.VHAR:
        return fit_vhar(design, temporal_basis)
    if method is Method.MLR:
        if pgd is None:
            if ranks is None:
                raise InvalidSpecError("MLR needs ranks")
            pgd = PgdConfig(ranks=tuple(ranks))  # type: ignore[arg-type]
        return fit_mlr(design, pgd)
    if r2 is None:
        if ranks is None:
            raise InvalidSpecError(f"{method.value} needs r2")
        r2 = int(ranks[1])
    if method is Method.MRI:
        return fit_mri(design, r2)
    return fit_vhari(design, r2, temporal_basis)


def default_rank_grid(n: int, p: int, rank_max: int = DEFAULT_RANK_MAX) -> list[Ranks]:
    return list(
        product(
            range(1, min(rank_max, n) + 1),
            range(1, min(rank_max, n) + 1),
            range(1, min(rank_max, p) + 1),
        )
    )


@dataclass(frozen=True)
class BicScore:
    ranks: Ranks
    bic: float
    loss: float
    d_M: int


def bic_scores(
    panel: RealizedPanel,
    P: int,
    lam: float = DEFAULT_BIC_LAMBDA,
    rank_grid: Sequence[Sequence[int]] | None = None,
    pgd_template: PgdConfig | None = None,
    threads: int = 1,
) -> list[BicScore]:
    """
    log(loss) + lam d_M log(T) / T for every grid point that fits.

    Grid points whose fit fails are skipped with a warning.
    """
    design = build_design(panel, P)
    n = design.n_assets
    grid = [tuple(int(r) for r in g) for g in (rank_grid or default_rank_grid(n, P))]
    for ranks in grid:
        if len(ranks) != 3 or not all(1 <= r <= d for r, d in zip(ranks, design.dims, strict=True)):
            raise InvalidSpecError(f"rank grid point {ranks} lies outside dims {design.dims}")
    template = pgd_template or PgdConfig(ranks=(1, 1, 1))
    penalty_unit = lam * np.log(design.n_days) / design.n_days

    def score(ranks: tuple[int, ...]) -> BicScore | None:
        config = PgdConfig(
            ranks=ranks,  # type: ignore[arg-type]
            running_ranks=ranks,  # type: ignore[arg-type]
            step_size=template.step_size,
            max_iterations=template.max_iterations,
            tolerance=template.tolerance,
        )
        try:
            fit = fit_mlr(design, config)
        except (MlrHarError, np.linalg.LinAlgError) as e:
            logger.warning(f"BIC grid point {ranks} skipped: {e}")
            log_event("warning", "bic_grid_point_skipped", {"ranks": ranks, "error": str(e)})
            return None
        d_m = parameter_count(n, P, ranks)
        value = np.log(max(fit.final_loss, np.finfo(float).tiny)) + penalty_unit * d_m
        return BicScore(ranks, float(value), fit.final_loss, d_m)  # type: ignore[arg-type]

    parallel = is_feature_enabled(FeatureFlag.PARALLEL_REPLICATIONS)
    parallel = parallel and threads > 1 and len(grid) > 1
    if parallel:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(score, grid))
    else:
        results = [score(ranks) for ranks in grid]
    scores = [s for s in results if s is not None]
    if not scores:
        raise MlrHarError("every BIC grid point failed to fit", error_code="BIC_EMPTY")
    return scores


def select_ranks_bic(
    panel: RealizedPanel,
    P: int,
    lam: float = DEFAULT_BIC_LAMBDA,
    rank_grid: Sequence[Sequence[int]] | None = None,
    pgd_template: PgdConfig | None = None,
    threads: int = 1,
) -> Ranks:
    """Grid point with the smallest BIC; ties go to smaller d_M, then lexicographic order."""
    return best_bic(bic_scores(panel, P, lam, rank_grid, pgd_template, threads)).ranks


def best_bic(scores: Sequence[BicScore]) -> BicScore:
    if not scores:
        raise InvalidSpecError("no BIC scores to choose from")
    best = min(scores, key=lambda s: (s.bic, s.d_M, s.ranks))
    logger.info(f"BIC selected ranks {best.ranks} (bic {best.bic:.6g}, d_M {best.d_M})")
    return best


def _projected_covariance(jacobian: np.ndarray, information: np.ndarray) -> np.ndarray:
    """
    H (H^T J H)^+ H^T for positive definite J, evaluated as Q (Q^T J Q)^{-1} Q^T.

    Q is an orthonormal basis of col(H) keeping the left singular vectors whose
    singular value is at least COLUMN_SPACE_RTOL * sigma_1. The small singular
    values of H never enter the inverse, only the conditioning of J does.
    """
    basis = linalg.orth(jacobian, rcond=COLUMN_SPACE_RTOL)
    inner = basis.T @ information @ basis
    inner = (inner + inner.T) / 2.0
    try:
        solved = linalg.cho_solve(linalg.cho_factor(inner), basis.T)
    except linalg.LinAlgError:
        solved = linalg.pinvh(inner) @ basis.T
    cov = basis @ solved
    return (cov + cov.T) / 2.0


def mlr_jacobian(tucker: TuckerFactors) -> np.ndarray:
    """Jacobian of vec(A_(1)) with respect to (vec G_(1), vec U1, vec U2, vec U3)."""
    u1, u2, u3 = tucker.factors
    n1, n2, p = tucker.dims
    core = tucker.core
    dims = tucker.dims
    to_mode1_from2 = mode_permutation(2, 1, dims)
    to_mode1_from3 = mode_permutation(3, 1, dims)
    blocks = [
        np.kron(u3, np.kron(u2, u1)),
        np.kron(np.kron(u3, u2) @ matricize(core, 1).T, np.eye(n1)),
        to_mode1_from2.apply(np.kron(np.kron(u3, u1) @ matricize(core, 2).T, np.eye(n2))),
        to_mode1_from3.apply(np.kron(np.kron(u2, u1) @ matricize(core, 3).T, np.eye(p))),
    ]
    return np.hstack(blocks)


def mri_jacobian(tensor: Tensor3, r2: int) -> np.ndarray:
    """Jacobian of vec(A_(1)) with respect to (vec H_(1), vec U2) where A = H x2 U2."""
    n, _, p = tensor.dims
    u2 = left_singular_vectors(matricize(tensor, 2), r2)
    reduced = mode_multiply(tensor, u2.T, 2)
    to_mode1_from2 = mode_permutation(2, 1, tensor.dims)
    blocks = [
        np.kron(np.eye(p), np.kron(u2, np.eye(n))),
        to_mode1_from2.apply(np.kron(matricize(reduced, 2).T, np.eye(n))),
    ]
    return np.hstack(blocks)


def asymptotic_covariance_from_moments(
    gamma_star: np.ndarray,
    sigma_eps: np.ndarray,
    method: Method | str,
    tensor: Tensor3 | None = None,
    tucker: TuckerFactors | None = None,
    r2: int | None = None,
) -> np.ndarray:
    """
    Asymptotic covariance of vec(A_(1)) given Gamma* and Sigma_eps.

    J = Gamma* kron Sigma_eps^{-1}; OLS gives J^{-1}, MLR and MRI project it
    through their Jacobians. The MLR factorization defaults to the HOSVD of
    ``tensor`` at its numerical multilinear ranks.
    """
    method = Method(method)
    sigma_eps = np.atleast_2d(sigma_eps)
    if method is Method.OLS:
        cov = np.kron(np.linalg.inv(gamma_star), sigma_eps)
        return (cov + cov.T) / 2.0
    information = np.kron(gamma_star, np.linalg.inv(sigma_eps))
    if method is Method.MLR:
        if tucker is None:
            if tensor is None:
                raise InvalidSpecError("MLR covariance needs a tensor or Tucker factors")
            tucker = hosvd(tensor, multilinear_ranks(tensor))
        return _projected_covariance(mlr_jacobian(tucker), information)
    if method is Method.MRI:
        if tensor is None:
            if tucker is None:
                raise InvalidSpecError("MRI covariance needs a tensor")
            tensor = tucker.reconstruct()
        if r2 is None:
            r2 = multilinear_ranks(tensor)[1]
        return _projected_covariance(mri_jacobian(tensor, r2), information)
    raise InvalidSpecError(f"no asymptotic covariance for {method.value}")


def asymptotic_covariance(
    coeffs: VarCoefficients,
    innov: InnovationSpec,
    method: Method | str,
    tucker: TuckerFactors | None = None,
    r2: int | None = None,
) -> np.ndarray:
    """N^2 P x N^2 P asymptotic covariance of sqrt(T) vec(A_hat_(1) - A_(1))."""
    gamma_star = stationary_autocovariance(coeffs, innov)
    return asymptotic_covariance_from_moments(
        gamma_star, innov.sigma_eps, method, coeffs.tensor, tucker, r2
    )


def sample_moments(design: RegressionDesign) -> tuple[np.ndarray, np.ndarray]:
    """Plug-in Gamma* = X^T X / n and Sigma_eps from the OLS residuals."""
    gamma_hat = design.gram / design.n_obs
    ols = fit_ols(design)
    residuals = design.responses - design.predictors @ matricize(ols.tensor, 1).T
    sigma_hat = residuals.T @ residuals / design.n_obs
    return gamma_hat, (sigma_hat + sigma_hat.T) / 2.0


def _spectral_extrema(lags: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Smallest and largest eigenvalue of A(z)^* A(z) at z = exp(i theta), per theta."""
    n, _, p = lags.shape
    powers = np.exp(1j * np.outer(thetas, np.arange(1, p + 1)))
    polynomial = np.eye(n)[None] - np.einsum("gp,ijp->gij", powers, lags)
    hermitian = np.conj(np.transpose(polynomial, (0, 2, 1))) @ polynomial
    eig = np.linalg.eigvalsh(hermitian)
    return np.stack([eig[:, 0], eig[:, -1]], axis=1)


def _refine(lags: np.ndarray, theta: float, half_width: float, column: int, sign: float) -> float:
    def objective(t: float) -> float:
        return sign * float(_spectral_extrema(lags, np.array([t]))[0, column])

    result = optimize.minimize_scalar(
        objective,
        bounds=(theta - half_width, theta + half_width),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return sign * float(result.fun)


def dependence_diagnostics(
    coeffs: VarCoefficients,
    innov: InnovationSpec,
    ranks: Sequence[int],
    grid_size: int = DEFAULT_GRID_SIZE,
    kappa: float = 1.0,
) -> DiagnosticsReport:
    """
    mu_min / mu_max of A(z)^* A(z) over |z| = 1 and the derived curvature bounds.

    The unit circle is scanned on ``grid_size`` equally spaced points and the
    best grid point of each extremum is refined by bounded scalar search.
    """
    cert = check_stationarity(coeffs)
    if not cert.stationary:
        raise NonStationaryError(cert.spectral_radius)
    if grid_size < 4:
        raise InvalidSpecError("grid_size must be at least 4")
    lags = np.asarray(coeffs.tensor.data)
    resolution = 2.0 * np.pi / grid_size
    thetas = np.arange(grid_size) * resolution
    extrema = _spectral_extrema(lags, thetas)
    i_min = int(np.argmin(extrema[:, 0]))
    i_max = int(np.argmax(extrema[:, 1]))
    mu_min = min(float(extrema[i_min, 0]), _refine(lags, thetas[i_min], resolution, 0, 1.0))
    mu_max = max(float(extrema[i_max, 1]), _refine(lags, thetas[i_max], resolution, 1, -1.0))

    sigma_eigs = np.linalg.eigvalsh(innov.sigma_eps)
    kappa_l = float(sigma_eigs[0] / mu_max)
    kappa_u = float(sigma_eigs[-1] / mu_min)
    return DiagnosticsReport(
        kappa_L=kappa_l,
        kappa_U=kappa_u,
        mu_min=mu_min,
        mu_max=mu_max,
        d_M=parameter_count(coeffs.n_assets, coeffs.n_lags, ranks),
        kappa=kappa,
        grid_size=grid_size,
        grid_resolution=resolution,
        suggested_step_size=2.0 / (3.0 * kappa_u),
    )
