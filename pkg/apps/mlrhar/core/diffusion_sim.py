"""
Euler simulation of HAR-Ito jump diffusions and realized measures.

Within day n the instantaneous variance is

    sigma2(t) = sigma2(n-1) + s (omega - sigma2(n-1)) + alpha_1 I(t)
                + sum_{l>=2} alpha_l y_{n-l+1} + beta Jr(t) + v (1 - s) Z(t)^2

with s = t - (n-1), I(t) the running integrated variance of the day, Jr(t)
the running sum of squared jumps and Z a Brownian motion restarted at each
day boundary. The explicit scheme updates I with the previous step's
sigma2, so on the step grid I obeys the linear recursion

    I_{k+1} = (Id + dt alpha_1) I_k + dt c_k

where c_k collects every term that does not involve I. The recursion is
solved per day without a Python step loop.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy import signal

from .errors import DimensionError, DomainValueError, InvalidSpecError

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
DEFAULT_SIGMA0 = 0.1
DEFAULT_X0 = float(np.log(50.0))
DEFAULT_LEVERAGE = -0.6
# above this eigenvector condition number the day recursion is stepped explicitly
EIGEN_CONDITION_LIMIT = 1e8


class MeasureKind(str, Enum):
    """Kinds of daily volatility measures a panel can hold."""

    RV = "RV"
    BV = "BV"
    LOG_RV = "logRV"
    LOG_BV = "logBV"
    SYNTHETIC = "synthetic"

    @property
    def is_log(self) -> bool:
        return self in (MeasureKind.LOG_RV, MeasureKind.LOG_BV)

    def logged(self) -> "MeasureKind":
        if self is MeasureKind.RV:
            return MeasureKind.LOG_RV
        if self is MeasureKind.BV:
            return MeasureKind.LOG_BV
        raise InvalidSpecError(f"log transform does not apply to {self.value} panels")


@dataclass(frozen=True)
class JumpSizeLaw:
    """Normal jump sizes L with mean and variance; omega_L = E[L^2]."""

    mean: float = 0.0
    variance: float = 0.01

    def __post_init__(self) -> None:
        if self.variance < 0 or not np.isfinite(self.variance) or not np.isfinite(self.mean):
            raise InvalidSpecError(f"invalid jump size law {self}")

    @property
    def second_moment(self) -> float:
        return self.mean**2 + self.variance

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(self.mean, np.sqrt(self.variance), size)


def _vector(value: np.ndarray | float | None, n: int, default: float, name: str) -> np.ndarray:
    if value is None:
        return np.full(n, default)
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise DimensionError(f"{name} must have length {n}, got shape {arr.shape}")
    return arr


def _matrix(value: np.ndarray | None, n: int, default: np.ndarray, name: str) -> np.ndarray:
    arr = default if value is None else np.array(value, dtype=float)
    if arr.shape != (n, n):
        raise DimensionError(f"{name} must be {n}x{n}, got shape {arr.shape}")
    return arr


def _check_correlation(mat: np.ndarray, name: str) -> None:
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise InvalidSpecError(f"{name} must be symmetric")
    if not np.allclose(np.diag(mat), 1.0, atol=1e-12):
        raise InvalidSpecError(f"{name} must have a unit diagonal")


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """
    Parameters of an N-asset HAR-Ito jump diffusion.

    alpha has dims (N, N, P) with alpha[:, :, l - 1] the lag-l matrix.
    Missing vectors default to: beta 0, v 0.4, jump intensity 0, drift 0;
    rho_b and rho_w default to the identity and rho to -0.6 * I.
    """

    omega: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray | None = None
    v: np.ndarray | None = None
    rho_b: np.ndarray | None = None
    rho_w: np.ndarray | None = None
    rho: np.ndarray | None = None
    jump_intensity: np.ndarray | None = None
    jump_size_law: JumpSizeLaw = field(default_factory=JumpSizeLaw)
    drift: np.ndarray | None = None

    def __post_init__(self) -> None:
        alpha = np.array(self.alpha, dtype=float)
        if alpha.ndim == 2:
            alpha = alpha[:, :, None]
        if alpha.ndim != 3 or alpha.shape[0] != alpha.shape[1]:
            raise DimensionError(f"alpha must have dims (N, N, P), got {alpha.shape}")
        n = alpha.shape[0]
        eye = np.eye(n)
        values = {
            "alpha": alpha,
            "omega": _vector(self.omega, n, 0.0, "omega"),
            "beta": _vector(self.beta, n, 0.0, "beta"),
            "v": _vector(self.v, n, 0.4, "v"),
            "rho_b": _matrix(self.rho_b, n, eye, "rho_b"),
            "rho_w": _matrix(self.rho_w, n, eye, "rho_w"),
            "rho": _matrix(self.rho, n, DEFAULT_LEVERAGE * eye, "rho"),
            "jump_intensity": _vector(self.jump_intensity, n, 0.0, "jump_intensity"),
            "drift": _vector(self.drift, n, 0.0, "drift"),
        }
        for name, arr in values.items():
            if not np.all(np.isfinite(arr)):
                raise InvalidSpecError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()

    def _validate(self) -> None:
        if np.any(self.omega <= 0):
            raise InvalidSpecError("omega entries must be positive")
        if np.any(self.alpha < 0):
            raise InvalidSpecError(
                "alpha entries must be nonnegative",
                hint="Negative feedback can drive the Euler variance below zero",
            )
        if np.any(self.beta < 0) or np.any(self.v < 0) or np.any(self.jump_intensity < 0):
            raise InvalidSpecError("beta, v and jump_intensity must be nonnegative")
        radius = float(np.max(np.abs(np.linalg.eigvals(self.alpha[:, :, 0]))))
        if radius >= 1.0:
            raise InvalidSpecError(
                f"spectral radius of the lag-1 alpha matrix is {radius:.6g}, must be below 1"
            )
        _check_correlation(self.rho_b, "rho_b")
        _check_correlation(self.rho_w, "rho_w")
        if np.any(np.abs(self.rho) >= 1):
            raise InvalidSpecError("leverage correlations must satisfy |rho_ij| < 1")
        if np.linalg.eigvalsh(self.joint_correlation).min() < -1e-10:
            raise InvalidSpecError(
                "joint correlation of (B, W) is not positive semi-definite",
                hint="Reduce the leverage correlations or the cross-asset correlations",
            )

    @property
    def n_assets(self) -> int:
        return int(self.alpha.shape[0])

    @property
    def n_lags(self) -> int:
        return int(self.alpha.shape[2])

    @property
    def joint_correlation(self) -> np.ndarray:
        """Correlation matrix of the stacked increments (dB, dW)."""
        return np.block([[self.rho_b, self.rho], [self.rho.T, self.rho_w]])

    @cached_property
    def joint_factor(self) -> np.ndarray:
        """Real square root F with F F^T equal to the joint correlation."""
        eigvals, eigvecs = np.linalg.eigh(self.joint_correlation)
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


@dataclass(frozen=True, eq=False)
class HighFreqPanel:
    """Simulated (or supplied) equally spaced log prices with daily truth."""

    log_prices: np.ndarray
    steps_per_day: int
    integrated_variance: np.ndarray | None = None
    jump_variation: np.ndarray | None = None
    jump_counts: np.ndarray | None = None
    variance_path: np.ndarray | None = None

    def __post_init__(self) -> None:
        prices = np.array(self.log_prices, dtype=float)
        if prices.ndim == 1:
            prices = prices[:, None]
        if self.steps_per_day < 1:
            raise DimensionError("steps_per_day must be positive")
        if (prices.shape[0] - 1) % self.steps_per_day != 0 or prices.shape[0] < 2:
            raise DimensionError(
                f"{prices.shape[0]} price rows do not form whole days of {self.steps_per_day} steps"
            )
        if not np.all(np.isfinite(prices)):
            raise DomainValueError("log prices must be finite")
        object.__setattr__(self, "log_prices", prices)
        daily_shape = (self.n_days, self.n_assets)
        for name in ("integrated_variance", "jump_variation", "jump_counts"):
            arr = getattr(self, name)
            if arr is not None and np.shape(arr) != daily_shape:
                raise DimensionError(f"{name} must have shape {daily_shape}")
        if self.integrated_variance is not None and np.any(self.integrated_variance < 0):
            raise DomainValueError("integrated variance must be nonnegative")

    @property
    def n_days(self) -> int:
        return (self.log_prices.shape[0] - 1) // self.steps_per_day

    @property
    def n_assets(self) -> int:
        return int(self.log_prices.shape[1])

    @property
    def total_jumps(self) -> int:
        return 0 if self.jump_counts is None else int(np.sum(self.jump_counts))


@dataclass(frozen=True, eq=False)
class RealizedPanel:
    """
    T x N panel of a daily measure.

    ``centering`` holds the per-asset means removed by center_and_transform and
    ``latent`` the true series when it is known (simulated data).
    """

    values: np.ndarray
    measure_kind: MeasureKind
    m: int | None = None
    centering: np.ndarray | None = None
    jump_estimates: np.ndarray | None = None
    latent: np.ndarray | None = None
    centered: bool = False

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1:
            raise DimensionError(f"panel values must be a T x N matrix, got {values.shape}")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            raise DomainValueError(
                "panel value is not finite", day=int(bad[0, 0]) + 1, asset=int(bad[0, 1]) + 1
            )
        kind = MeasureKind(self.measure_kind)
        if kind in (MeasureKind.RV, MeasureKind.BV) and not self.centered:
            negative = np.argwhere(values < 0)
            if negative.size:
                raise DomainValueError(
                    f"raw {kind.value} must be nonnegative",
                    day=int(negative[0, 0]) + 1,
                    asset=int(negative[0, 1]) + 1,
                )
        centering = _vector(self.centering, values.shape[1], 0.0, "centering")
        values.setflags(write=False)
        centering.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "measure_kind", kind)
        object.__setattr__(self, "centering", centering)
        for name in ("jump_estimates", "latent"):
            arr = getattr(self, name)
            if arr is not None and np.shape(arr) != values.shape:
                raise DimensionError(f"{name} must have shape {values.shape}")

    @property
    def n_days(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_assets(self) -> int:
        return int(self.values.shape[1])

    def uncenter(self, values: np.ndarray) -> np.ndarray:
        """Map centered (and possibly logged) values back to the measure scale."""
        out = np.asarray(values, dtype=float) + self.centering
        return np.exp(out) if self.measure_kind.is_log else out

    def slice_days(self, start: int, stop: int) -> "RealizedPanel":
        """Days [start, stop) as a new panel (0-based, uncentered panels only)."""
        if self.centered:
            raise InvalidSpecError("slice the raw panel and center each window separately")

        def cut(arr: np.ndarray | None) -> np.ndarray | None:
            return None if arr is None else arr[start:stop]

        return RealizedPanel(
            values=self.values[start:stop],
            measure_kind=self.measure_kind,
            m=self.m,
            jump_estimates=cut(self.jump_estimates),
            latent=cut(self.latent),
        )


def _day_stream(seed: int, day: int, slot: int) -> np.random.Generator:
    """Generator for one (day, slot) cell; slot 0 drives the Brownians, slot i + 1 asset i jumps."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(day, slot)))


class _DayIntegrator:
    """Solves I_{k+1} = (Id + dt alpha_1) I_k + dt c_k, I_0 = 0, for one day."""

    def __init__(self, alpha1: np.ndarray, delta: float):
        self.alpha1 = alpha1
        self.delta = delta
        self.zero = not np.any(alpha1)
        self.eigen: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
        if not self.zero:
            eigvals, eigvecs = np.linalg.eig(alpha1)
            if np.linalg.cond(eigvecs) < EIGEN_CONDITION_LIMIT:
                self.eigen = (eigvals, eigvecs, np.linalg.inv(eigvecs))
            else:
                logger.debug("alpha_1 is close to defective, stepping the day recursion")

    def __call__(self, c: np.ndarray) -> np.ndarray:
        steps = c.shape[0] - 1
        out = np.zeros_like(c)
        if self.zero:
            out[1:] = self.delta * np.cumsum(c[:-1], axis=0)
            return out
        if self.eigen is None:
            transition = np.eye(self.alpha1.shape[0]) + self.delta * self.alpha1
            for k in range(steps):
                out[k + 1] = transition @ out[k] + self.delta * c[k]
            return out
        eigvals, eigvecs, inv_eigvecs = self.eigen
        drive = self.delta * (c[:-1] @ inv_eigvecs.T)
        coords = np.zeros((steps + 1, eigvals.size), dtype=complex)
        for i, lam in enumerate(eigvals):
            coords[1:, i] = signal.lfilter([1.0], [1.0, -(1.0 + self.delta * lam)], drive[:, i])
        return (coords @ eigvecs.T).real


def simulate(
    spec: DiffusionSpec,
    T: int,
    steps_per_day: int,
    seed: int,
    sigma0: float = DEFAULT_SIGMA0,
    x0: float = DEFAULT_X0,
    burn_in: int | None = None,
    keep_variance_path: bool = False,
) -> HighFreqPanel:
    """
    Simulate T recorded days of log prices and instantaneous variance.

    Args:
        spec: Diffusion parameters
        T: Number of recorded days
        steps_per_day: Euler steps per day (1 / dt)
        seed: Master seed; day d uses streams keyed by (seed, d, slot)
        sigma0: Initial volatility of every asset
        x0: Initial log price of the recorded period
        burn_in: Unrecorded days before day 1 (default P)
        keep_variance_path: Also return the sigma^2 path on the step grid

    Returns:
        HighFreqPanel with left-Riemann integrated variance and jump variation per day
    """
    if T < 1:
        raise DimensionError("T must be at least one day")
    if steps_per_day < 2:
        raise DimensionError("steps_per_day must be at least 2")
    n, lags = spec.n_assets, spec.n_lags
    burn_in = lags if burn_in is None else int(burn_in)
    delta = 1.0 / steps_per_day
    frac = np.arange(steps_per_day + 1) * delta
    integrate = _DayIntegrator(spec.alpha[:, :, 0], delta)
    factor = spec.joint_factor
    jump_rate = spec.jump_intensity * delta

    start = np.full(n, sigma0**2)
    # history[l - 2] holds y_{n-l+1} for the lag-l term, seeded with omega
    history = np.tile(spec.omega, (max(lags - 1, 0), 1))
    x_last = np.full(n, float(x0))

    total_steps = T * steps_per_day
    log_prices = np.empty((total_steps + 1, n))
    log_prices[0] = x_last
    path = np.empty((total_steps + 1, n)) if keep_variance_path else None
    iv = np.empty((T, n))
    jv = np.empty((T, n))
    counts = np.zeros((T, n), dtype=np.int64)

    for day in range(burn_in + T):
        rng = _day_stream(seed, day, 0)
        shocks = rng.standard_normal((steps_per_day, 2 * n)) @ factor.T * np.sqrt(delta)
        d_b, d_w = shocks[:, :n], shocks[:, n:]

        jump_sum = np.zeros((steps_per_day, n))
        jump_sq = np.zeros((steps_per_day, n))
        day_counts = np.zeros(n, dtype=np.int64)
        for asset in np.flatnonzero(jump_rate > 0):
            jrng = _day_stream(seed, day, asset + 1)
            per_step = jrng.poisson(jump_rate[asset], steps_per_day)
            total = int(per_step.sum())
            if total == 0:
                continue
            sizes = spec.jump_size_law.sample(jrng, total)
            where = np.repeat(np.arange(steps_per_day), per_step)
            jump_sum[:, asset] = np.bincount(where, weights=sizes, minlength=steps_per_day)
            jump_sq[:, asset] = np.bincount(where, weights=sizes**2, minlength=steps_per_day)
            day_counts[asset] = total

        z = np.vstack([np.zeros(n), np.cumsum(d_w, axis=0)])
        running_jumps = np.vstack([np.zeros(n), np.cumsum(jump_sq, axis=0)])
        lag_terms = np.einsum("ijl,lj->i", spec.alpha[:, :, 1:], history) if lags > 1 else 0.0
        remaining = (1.0 - frac)[:, None]
        c = (
            remaining * start
            + frac[:, None] * spec.omega
            + lag_terms
            + spec.beta * running_jumps
            + spec.v * remaining * z**2
        )
        sigma2 = np.maximum(c + integrate(c) @ spec.alpha[:, :, 0].T, VARIANCE_FLOOR)

        y = delta * sigma2[:-1].sum(axis=0)
        if lags > 1:
            history = np.vstack([y, history[:-1]])
        start = sigma2[-1]

        if day < burn_in:
            continue
        rec = day - burn_in
        rows = slice(rec * steps_per_day + 1, (rec + 1) * steps_per_day + 1)
        increments = spec.drift * delta + np.sqrt(sigma2[:-1]) * d_b + jump_sum
        log_prices[rows] = x_last + np.cumsum(increments, axis=0)
        x_last = log_prices[rows.stop - 1]
        if path is not None:
            path[rec * steps_per_day : (rec + 1) * steps_per_day] = sigma2[:-1]
            path[-1] = sigma2[-1]
        iv[rec] = y
        jv[rec] = jump_sq.sum(axis=0)
        counts[rec] = day_counts

    logger.debug(
        f"Simulated {T} days x {steps_per_day} steps for {n} assets "
        f"(burn-in {burn_in}, {int(counts.sum())} jumps)"
    )
    return HighFreqPanel(
        log_prices=log_prices,
        steps_per_day=steps_per_day,
        integrated_variance=iv,
        jump_variation=jv,
        jump_counts=counts,
        variance_path=path,
    )


def _intraday_returns(panel: HighFreqPanel, m: int) -> np.ndarray:
    if m < 1 or panel.steps_per_day % m != 0:
        raise DimensionError(
            f"m={m} must divide steps_per_day={panel.steps_per_day}",
        )
    stride = panel.steps_per_day // m
    sampled = panel.log_prices[::stride]
    return np.diff(sampled, axis=0).reshape(panel.n_days, m, panel.n_assets)


def realized_volatility(panel: HighFreqPanel, m: int) -> RealizedPanel:
    """Daily sum of squared returns over m equally spaced intraday intervals."""
    returns = _intraday_returns(panel, m)
    return RealizedPanel(
        values=np.sum(returns**2, axis=1),
        measure_kind=MeasureKind.RV,
        m=m,
        latent=panel.integrated_variance,
    )


def bipower_variation(panel: HighFreqPanel, m: int) -> RealizedPanel:
    """
    Bipower variation (pi/2) (m/(m-1)) sum |r_k| |r_{k-1}| with jump estimates.

    jump_estimates holds max(RV - BV, 0) per day.
    """
    if m < 2:
        raise DimensionError("bipower variation needs m >= 2")
    returns = _intraday_returns(panel, m)
    absolute = np.abs(returns)
    bv = (np.pi / 2.0) * (m / (m - 1.0)) * np.sum(absolute[:, 1:] * absolute[:, :-1], axis=1)
    rv = np.sum(returns**2, axis=1)
    return RealizedPanel(
        values=bv,
        measure_kind=MeasureKind.BV,
        m=m,
        jump_estimates=np.maximum(rv - bv, 0.0),
        latent=panel.integrated_variance,
    )


def center_and_transform(raw: RealizedPanel, log_transform: bool = False) -> RealizedPanel:
    """Optionally take logs, then subtract per-asset means (stored in ``centering``)."""
    if raw.centered:
        raise InvalidSpecError("panel is already centered")
    values = raw.values
    kind = raw.measure_kind
    if log_transform:
        bad = np.argwhere(values <= 0)
        if bad.size:
            raise DomainValueError(
                "log transform needs positive values",
                day=int(bad[0, 0]) + 1,
                asset=int(bad[0, 1]) + 1,
            )
        kind = kind.logged()
        values = np.log(values)
    means = values.mean(axis=0)
    return RealizedPanel(
        values=values - means,
        measure_kind=kind,
        m=raw.m,
        centering=means,
        jump_estimates=raw.jump_estimates,
        latent=raw.latent,
        centered=True,
    )
