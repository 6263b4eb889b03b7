"""Rolling one-step-ahead forecasts, QLIKE and subspace discrepancy."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd
from scipy import linalg

from .diffusion_sim import MeasureKind, RealizedPanel, center_and_transform
from .errors import (
    DimensionError,
    DomainValueError,
    InsufficientHistoryError,
    InvalidSpecError,
    MlrHarError,
    RankDeficiencyError,
    log_event,
)
from .estimators import Method, PgdConfig, build_design, fit_by_method
from .tensor_core import Tensor3, matricize

logger = logging.getLogger(__name__)


class RefitPolicy(str, Enum):
    REFIT_EACH_STEP = "refit"
    FIXED = "fixed"


@dataclass(frozen=True, eq=False)
class ModelConfig:
    """
    How a rolling window is turned into coefficients.

    ``fixed_tensor`` bypasses estimation entirely (oracle or benchmark
    coefficients). With the FIXED policy the model is estimated on the first
    window and reused; centering is still recomputed on every window.
    """

    method: Method = Method.MLR
    n_lags: int = 22
    ranks: tuple[int, int, int] | None = None
    r2: int | None = None
    pgd: PgdConfig | None = None
    log_transform: bool = False
    refit: RefitPolicy = RefitPolicy.REFIT_EACH_STEP
    fixed_tensor: Tensor3 | None = None
    temporal_basis: np.ndarray | None = None
    name: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "refit", RefitPolicy(self.refit))
        if self.n_lags < 1:
            raise InvalidSpecError("n_lags must be at least 1")
        if self.fixed_tensor is not None and self.fixed_tensor.dims[2] != self.n_lags:
            raise DimensionError(
                f"fixed tensor has {self.fixed_tensor.dims[2]} lags, config says {self.n_lags}"
            )

    @property
    def model_id(self) -> str:
        if self.name:
            return self.name
        if self.fixed_tensor is not None:
            return "fixed"
        label = self.method.value
        if self.method is Method.MLR and self.ranks:
            label += "-" + "x".join(str(r) for r in self.ranks)
        elif self.method in (Method.MRI, Method.VHARI) and (self.r2 or self.ranks):
            label += f"-{self.r2 or self.ranks[1]}"  # type: ignore[index]
        return label


@dataclass(frozen=True, eq=False)
class ForecastRun:
    """
    M one-step-ahead forecasts on the measure's original scale.

    Row s forecasts day window_size + s (0-based) from days s .. s + window_size - 1.
    Rows listed in ``failed_steps`` hold NaN and are left out of scoring.
    """

    window_size: int
    horizon: int
    forecasts: np.ndarray
    realized: np.ndarray
    model_id: str
    refit: RefitPolicy
    measure_kind: MeasureKind
    failed_steps: tuple[int, ...] = ()
    errors: dict[int, str] = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return bool(self.failed_steps)

    @property
    def scored_steps(self) -> np.ndarray:
        mask = np.ones(self.horizon, dtype=bool)
        mask[list(self.failed_steps)] = False
        return np.flatnonzero(mask)

    def to_frame(self) -> pd.DataFrame:
        """Long table: step, day, asset, forecast, realized (days and assets 1-based)."""
        m, n = self.forecasts.shape
        steps = np.repeat(np.arange(m), n)
        return pd.DataFrame(
            {
                "step": steps + 1,
                "day": steps + self.window_size + 1,
                "asset": np.tile(np.arange(1, n + 1), m),
                "forecast": self.forecasts.ravel(),
                "realized": self.realized.ravel(),
            }
        )


def _one_step(tensor: Tensor3, centered: RealizedPanel) -> np.ndarray:
    p = tensor.dims[2]
    x = centered.values[::-1][:p].reshape(-1)
    return centered.uncenter(matricize(tensor, 1) @ x)


def _fit_window(config: ModelConfig, centered: RealizedPanel) -> Tensor3:
    design = build_design(centered, config.n_lags)
    fit = fit_by_method(
        design,
        config.method,
        ranks=config.ranks,
        r2=config.r2,
        pgd=config.pgd,
        temporal_basis=config.temporal_basis,
    )
    return fit.tensor


def rolling_forecast(
    panel: RealizedPanel, model_config: ModelConfig, T: int, M: int
) -> ForecastRun:
    """
    Fixed-length rolling window, one-step-ahead forecasts.

    Args:
        panel: Uncentered daily measure (RV, BV or their logs are formed here)
        model_config: Estimator and policy
        T: Window length in days
        M: Number of forecast days

    Returns:
        ForecastRun with failed steps recorded rather than raised
    """
    if panel.centered:
        raise InvalidSpecError("rolling_forecast centers each window itself; pass the raw panel")
    if M < 1:
        raise InvalidSpecError("horizon M must be at least 1")
    if T <= model_config.n_lags:
        raise InsufficientHistoryError(f"window {T} cannot support {model_config.n_lags} lags")
    if panel.n_days < T + M:
        raise InsufficientHistoryError(
            f"{panel.n_days} days cannot cover window {T} plus {M} forecasts"
        )

    n = panel.n_assets
    forecasts = np.full((M, n), np.nan)
    realized = np.array(panel.values[T : T + M])
    failed: list[int] = []
    errors: dict[int, str] = {}
    tensor = model_config.fixed_tensor

    for step in range(M):
        try:
            centered = center_and_transform(
                panel.slice_days(step, step + T), model_config.log_transform
            )
            if model_config.fixed_tensor is None and (
                tensor is None or model_config.refit is RefitPolicy.REFIT_EACH_STEP
            ):
                tensor = _fit_window(model_config, centered)
            if tensor is None:
                raise InvalidSpecError("no coefficients available")
            if tensor.dims != (n, n, model_config.n_lags):
                raise DimensionError(f"coefficients {tensor.dims} do not fit a {n}-asset panel")
            forecasts[step] = _one_step(tensor, centered)
        except (MlrHarError, np.linalg.LinAlgError) as e:
            failed.append(step)
            errors[step] = str(e)
            logger.warning(f"forecast step {step + 1} of {model_config.model_id} failed: {e}")
            log_event(
                "warning",
                "forecast_step_failed",
                {"model": model_config.model_id, "step": step + 1, "error": str(e)},
            )

    if failed:
        logger.warning(f"{model_config.model_id}: {len(failed)} of {M} forecast steps failed")
    return ForecastRun(
        window_size=T,
        horizon=M,
        forecasts=forecasts,
        realized=realized,
        model_id=model_config.model_id,
        refit=model_config.refit,
        measure_kind=panel.measure_kind,
        failed_steps=tuple(failed),
        errors=errors,
    )


def qlike(run: ForecastRun) -> np.ndarray:
    """Per-asset mean of y/f - log(y/f) - 1 over the scored steps."""
    steps = run.scored_steps
    if steps.size == 0:
        raise InvalidSpecError(f"{run.model_id}: every forecast step failed, nothing to score")
    forecasts = run.forecasts[steps]
    realized = run.realized[steps]
    for name, values in (("forecast", forecasts), ("realization", realized)):
        bad = np.argwhere(~(values > 0))
        if bad.size:
            row, asset = bad[0]
            raise DomainValueError(
                f"QLIKE needs positive values, {name} is {values[row, asset]}",
                day=int(run.window_size + steps[row]) + 1,
                asset=int(asset) + 1,
            )
    ratio = realized / forecasts
    return np.mean(ratio - np.log(ratio) - 1.0, axis=0)


def subspace_discrepancy(U: np.ndarray, V: np.ndarray) -> float:
    """
    {1 - tr(D1 D1^T D2 D2^T) / k}^(1/2) for orthonormal bases D1, D2 of span U and span V.

    0 for equal column spaces and 1 for orthogonal ones.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if U.shape != V.shape:
        raise DimensionError(f"matrices must share a shape, got {U.shape} and {V.shape}")
    k = U.shape[1]
    bases = []
    for name, mat in (("U", U), ("V", V)):
        basis = linalg.orth(mat)
        if basis.shape[1] != k:
            raise RankDeficiencyError(
                f"{name} has rank {basis.shape[1]}, needs full column rank {k}"
            )
        bases.append(basis)
    overlap = float(np.sum((bases[0].T @ bases[1]) ** 2))
    return float(np.sqrt(np.clip(1.0 - overlap / k, 0.0, 1.0)))


def compare_forecasts(
    panel: RealizedPanel, configs: Sequence[ModelConfig], T: int, M: int
) -> pd.DataFrame:
    """QLIKE per model and asset over a common rolling window, one row per model."""
    return pd.DataFrame([score_run(rolling_forecast(panel, c, T, M)) for c in configs])


def score_run(run: ForecastRun) -> dict[str, object]:
    """One summary row: model, refit policy, failed steps, QLIKE per asset and their mean."""
    scores = qlike(run)
    row: dict[str, object] = {
        "model": run.model_id,
        "refit": run.refit.value,
        "failed_steps": len(run.failed_steps),
    }
    row.update({f"asset_{i + 1}": float(s) for i, s in enumerate(scores)})
    row["mean_qlike"] = float(np.mean(scores))
    logger.info(f"{run.model_id}: mean QLIKE {row['mean_qlike']:.6g}")
    return row
