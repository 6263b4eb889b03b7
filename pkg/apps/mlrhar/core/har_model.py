"""Low-frequency VAR/HAR layer: rho map, HAR weights, stationarity, Gamma*, VAR data."""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
from scipy import linalg

from .diffusion_sim import DiffusionSpec, MeasureKind, RealizedPanel
from .errors import (
    DimensionError,
    InsufficientHistoryError,
    InvalidSpecError,
    NonStationaryError,
)
from .tensor_core import Tensor3, left_singular_vectors, matricize, mode_multiply

logger = logging.getLogger(__name__)

STATIONARITY_MARGIN = 1e-8
HAR_WEEK = 5
HAR_MONTH = 22


@dataclass(frozen=True, eq=False)
class VarCoefficients:
    """
    VAR(P) coefficients as an (N, N, P) tensor with unfolding 1 = (A_1, ..., A_P).

    intercept is omega^g (zero for centered models) and jump_loading beta^g.
    """

    tensor: Tensor3
    intercept: np.ndarray | None = None
    jump_loading: np.ndarray | None = None

    def __post_init__(self) -> None:
        n, n2, _ = self.tensor.dims
        if n != n2:
            raise DimensionError(f"coefficient tensor must be N x N x P, got {self.tensor.dims}")
        intercept = np.zeros(n) if self.intercept is None else np.array(self.intercept, float)
        if intercept.shape != (n,):
            raise DimensionError(f"intercept must have length {n}")
        object.__setattr__(self, "intercept", intercept)
        if self.jump_loading is not None and np.shape(self.jump_loading) != (n, n):
            raise DimensionError(f"jump_loading must be {n}x{n}")

    @classmethod
    def from_lag_matrices(
        cls, lags: list[np.ndarray] | np.ndarray, intercept: np.ndarray | None = None
    ) -> "VarCoefficients":
        stacked = np.stack([np.atleast_2d(np.asarray(a, dtype=float)) for a in lags], axis=2)
        return cls(Tensor3(stacked), intercept)

    @classmethod
    def zeros(cls, n: int, p: int) -> "VarCoefficients":
        return cls(Tensor3.zeros((n, n, p)))

    @property
    def n_assets(self) -> int:
        return self.tensor.dims[0]

    @property
    def n_lags(self) -> int:
        return self.tensor.dims[2]

    def lag_matrix(self, j: int) -> np.ndarray:
        """A_j for j = 1..P."""
        return np.asarray(self.tensor.data[:, :, j - 1])

    def unfolding(self) -> np.ndarray:
        return matricize(self.tensor, 1)

    def companion(self) -> np.ndarray:
        """NP x NP companion matrix of the VAR(P)."""
        n, p = self.n_assets, self.n_lags
        comp = np.zeros((n * p, n * p))
        comp[:n] = self.unfolding()
        comp[n:, :-n] = np.eye(n * (p - 1))
        return comp


@dataclass(frozen=True, eq=False)
class RhoTriple:
    rho1: np.ndarray | float
    rho2: np.ndarray | float
    rho3: np.ndarray | float


class InnovationLaw(str, Enum):
    """Standardized innovation families (unit variance, sub-Gaussian)."""

    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"


@dataclass(frozen=True, eq=False)
class InnovationSpec:
    """Innovations eps_n = Sigma^{1/2} xi_n with xi_n drawn from ``distribution``."""

    sigma_eps: np.ndarray
    distribution: InnovationLaw = InnovationLaw.GAUSSIAN

    def __post_init__(self) -> None:
        sigma = np.atleast_2d(np.array(self.sigma_eps, dtype=float))
        if sigma.shape[0] != sigma.shape[1]:
            raise DimensionError(f"sigma_eps must be square, got {sigma.shape}")
        if not np.allclose(sigma, sigma.T, atol=1e-12):
            raise InvalidSpecError("sigma_eps must be symmetric")
        object.__setattr__(self, "sigma_eps", sigma)
        object.__setattr__(self, "distribution", InnovationLaw(self.distribution))
        # fails early when sigma_eps is not positive definite
        _ = self.cholesky

    @classmethod
    def identity(cls, n: int) -> "InnovationSpec":
        return cls(np.eye(n))

    @cached_property
    def cholesky(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.sigma_eps)
        except np.linalg.LinAlgError as e:
            raise InvalidSpecError("sigma_eps must be positive definite") from e

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        n = self.sigma_eps.shape[0]
        if self.distribution is InnovationLaw.RADEMACHER:
            xi = rng.choice([-1.0, 1.0], size=(size, n))
        else:
            xi = rng.standard_normal((size, n))
        return xi @ self.cholesky.T


@dataclass(frozen=True)
class StationarityCertificate:
    stationary: bool
    spectral_radius: float


def rho_functions(alpha1: np.ndarray | float) -> RhoTriple:
    """
    rho_j(a) = sum_k a^k / (k + j)! for j = 1, 2, 3.

    These equal a^-1 (e^a - I), a^-2 (e^a - I - a) and a^-3 (e^a - I - a - a^2/2)
    but stay defined for singular a. All three come from one scaling-and-squaring
    exponential of the block matrix [[a, I, 0, 0], [0, 0, I, 0], [0, 0, 0, I], 0],
    whose first block row is (e^a, rho_1, rho_2, rho_3).
    """
    scalar = np.ndim(alpha1) == 0
    a = np.atleast_2d(np.asarray(alpha1, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"alpha1 must be square, got {a.shape}")
    radius = float(np.max(np.abs(np.linalg.eigvals(a))))
    if radius >= 1.0:
        raise InvalidSpecError(f"spectral radius of alpha1 is {radius:.6g}, must be below 1")
    n = a.shape[0]
    block = np.zeros((4 * n, 4 * n))
    block[:n, :n] = a
    for j in range(3):
        block[j * n : (j + 1) * n, (j + 1) * n : (j + 2) * n] = np.eye(n)
    expo = linalg.expm(block)
    rhos = [expo[:n, (j + 1) * n : (j + 2) * n] for j in range(3)]
    if scalar:
        return RhoTriple(float(rhos[0][0, 0]), float(rhos[1][0, 0]), float(rhos[2][0, 0]))
    return RhoTriple(rhos[0], rhos[1], rhos[2])


def high_to_low_frequency(spec: DiffusionSpec) -> VarCoefficients:
    """Daily VAR implied by the diffusion: A_j = (rho1 - rho2) alpha_j plus omega^g and beta^g."""
    rho = rho_functions(spec.alpha[:, :, 0])
    rho1, rho2, rho3 = (np.atleast_2d(r) for r in (rho.rho1, rho.rho2, rho.rho3))
    gain = rho1 - rho2
    lags = np.einsum("ik,kjl->ijl", gain, spec.alpha)
    jump_drift = spec.beta * spec.jump_size_law.second_moment * spec.jump_intensity
    intercept = rho1 @ spec.omega + rho2 @ jump_drift + (rho2 - 2.0 * rho3) @ spec.v
    return VarCoefficients(
        tensor=Tensor3(lags),
        intercept=intercept,
        jump_loading=gain * spec.beta[None, :],
    )


def build_uc(week: int = HAR_WEEK, month: int = HAR_MONTH) -> np.ndarray:
    """HAR weights: daily, weekly-average and monthly-average columns (month x 3)."""
    if not 1 < week < month:
        raise InvalidSpecError(f"need 1 < week < month, got week={week}, month={month}")
    weights = np.zeros((month, 3))
    weights[0, 0] = 1.0
    weights[:week, 1] = 1.0 / week
    weights[:, 2] = 1.0 / month
    return weights


def check_stationarity(
    coeffs: VarCoefficients, margin: float = STATIONARITY_MARGIN
) -> StationarityCertificate:
    """Companion spectral radius and whether it lies below 1 - margin."""
    radius = float(np.max(np.abs(np.linalg.eigvals(coeffs.companion()))))
    return StationarityCertificate(stationary=radius < 1.0 - margin, spectral_radius=radius)


def _require_stationary(coeffs: VarCoefficients) -> None:
    cert = check_stationarity(coeffs)
    if not cert.stationary:
        raise NonStationaryError(cert.spectral_radius)


def stationary_autocovariance(coeffs: VarCoefficients, innov: InnovationSpec) -> np.ndarray:
    """
    Gamma* = Var((y_{n-1}, ..., y_{n-P})), the NP x NP block Toeplitz matrix.

    Block (a, b) is Gamma_{b-a} = cov(y_{n+b-a}, y_n).
    """
    _require_stationary(coeffs)
    n, p = coeffs.n_assets, coeffs.n_lags
    if innov.sigma_eps.shape != (n, n):
        raise DimensionError(f"sigma_eps must be {n}x{n}")
    q = np.zeros((n * p, n * p))
    q[:n, :n] = innov.sigma_eps
    gamma = linalg.solve_discrete_lyapunov(coeffs.companion(), q)
    return (gamma + gamma.T) / 2.0


def generate_var(
    coeffs: VarCoefficients,
    innov: InnovationSpec,
    T: int,
    seed: int,
    measurement_noise_m: int | None = None,
) -> RealizedPanel:
    """
    Simulate T observations of the centered VAR after a burn-in of max(500, 10P).

    With measurement_noise_m the returned values carry i.i.d. N(0, m^{-1/2} I)
    noise and ``latent`` holds the noise-free series.
    """
    _require_stationary(coeffs)
    n, p = coeffs.n_assets, coeffs.n_lags
    if T < 1:
        raise InvalidSpecError("T must be positive")
    burn = max(500, 10 * p)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    shocks = innov.draw(rng, burn + T)
    unfolding = np.array(coeffs.unfolding())
    state = np.zeros(n * p)
    out = np.empty((burn + T, n))
    for step in range(burn + T):
        y = unfolding @ state + shocks[step]
        out[step] = y
        state = np.concatenate([y, state[:-n]])
    latent = out[burn:]
    values = latent
    if measurement_noise_m is not None:
        if measurement_noise_m < 1:
            raise InvalidSpecError("measurement noise m must be positive")
        values = latent + rng.standard_normal((T, n)) * measurement_noise_m ** (-0.25)
    return RealizedPanel(
        values=values,
        measure_kind=MeasureKind.SYNTHETIC,
        m=measurement_noise_m,
        latent=latent,
        centered=True,
    )


def heterogeneous_components(panel: RealizedPanel, U3: np.ndarray, n: int) -> np.ndarray:
    """
    Temporal factors x^(k)_n = sum_j U3[j, k] y_{n-j} for day n (1-based).

    Returns:
        r3 x N array, row k is x^(k)_n
    """
    basis = np.asarray(U3, dtype=float)
    if basis.ndim == 1:
        basis = basis[:, None]
    p = basis.shape[0]
    if n <= p or n > panel.n_days:
        raise InsufficientHistoryError(
            f"day {n} needs {p} earlier days within a {panel.n_days}-day panel"
        )
    recent_first = panel.values[n - 2 :: -1][:p]
    return basis.T @ recent_first


def temporal_factor_form(tensor: Tensor3, r3: int) -> tuple[Tensor3, np.ndarray]:
    """
    Slices S (N x N x r3) and loadings U3 (P x r3) with tensor ~ S x3 U3.

    Exact when the mode-3 rank is at most r3; the columns of U3 are the
    automatically selected temporal weights to compare against build_uc().
    """
    loadings = left_singular_vectors(matricize(tensor, 3), r3)
    return mode_multiply(tensor, loadings.T, 3), loadings
