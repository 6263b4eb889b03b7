"""Error types and console reporting for mlrhar."""

import json
import logging
from datetime import datetime, timezone

UTC = timezone.utc
from typing import Any

logger = logging.getLogger(__name__)


class MlrHarError(Exception):
    """Base exception for mlrhar errors."""

    def __init__(self, message: str, user_hint: str | None = None, error_code: str | None = None):
        """
        Initialize mlrhar error.

        Args:
            message: Technical error message
            user_hint: Hint for fixing the issue
            error_code: Error code for categorization
        """
        super().__init__(message)
        self.user_hint = user_hint
        self.error_code = error_code


class DimensionError(MlrHarError):
    """Array shapes do not agree."""

    def __init__(self, message: str):
        super().__init__(message, error_code="DIM_MISMATCH")


class InvalidSpecError(MlrHarError):
    """Model parameters violate a construction invariant."""

    def __init__(self, message: str, hint: str | None = None):
        super().__init__(message, user_hint=hint, error_code="SPEC_INVALID")


class NonStationaryError(MlrHarError):
    """Coefficients do not define a stationary process."""

    def __init__(self, spectral_radius: float):
        message = f"Coefficients are not stationary: spectral radius {spectral_radius:.6g} >= 1"
        hint = "Shrink the lag matrices so the companion spectral radius is below one"
        super().__init__(message, user_hint=hint, error_code="NON_STATIONARY")
        self.spectral_radius = spectral_radius


class SingularDesignError(MlrHarError):
    """Gram matrix of the predictors cannot be inverted."""

    def __init__(self, n_rows: int, n_params: int, condition: float | None = None):
        message = f"Predictor Gram matrix is singular ({n_rows} rows, {n_params} predictors"
        if condition is not None:
            message += f", condition number {condition:.3g}"
        message += ")"
        hint = "Supply more observations than N*P or add ridge jitter to the data"
        super().__init__(message, user_hint=hint, error_code="SINGULAR_DESIGN")


class InsufficientHistoryError(MlrHarError):
    """Not enough days to form the requested lags or windows."""

    def __init__(self, message: str):
        super().__init__(
            message, user_hint="Use a longer panel or fewer lags", error_code="HISTORY_SHORT"
        )


class DomainValueError(MlrHarError):
    """A value lies outside the domain of a transform (log, ratio)."""

    def __init__(self, message: str, day: int | None = None, asset: int | None = None):
        if day is not None and asset is not None:
            message = f"{message} at day {day}, asset {asset}"
        super().__init__(message, error_code="VALUE_DOMAIN")
        self.day = day
        self.asset = asset


class RankDeficiencyError(MlrHarError):
    """A matrix does not have the required column rank."""

    def __init__(self, message: str):
        super().__init__(message, error_code="RANK_DEFICIENT")


class ConfigError(MlrHarError):
    """Run configuration is missing, malformed or inconsistent."""

    def __init__(self, message: str, hint: str | None = None):
        super().__init__(message, user_hint=hint, error_code="CONFIG_INVALID")


class PanelFormatError(MlrHarError):
    """Input CSV could not be parsed into a panel."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(
            message, user_hint="Expected header day,asset,value", error_code="PANEL_PARSE"
        )
        self.line = line


def log_event(severity: str, action: str, payload: dict[str, Any]) -> None:
    """Log structured event for monitoring."""
    event = {
        "timestamp": datetime.now(UTC).isoformat(),
        "severity": severity,
        "action": action,
        "payload": payload,
    }
    level = logging.WARNING if severity in ("warning", "error") else logging.INFO
    logger.log(level, f"EVENT: {json.dumps(event, default=str)}")


def format_console_error(error: MlrHarError) -> str:
    """
    Format an mlrhar error for console output.

    Args:
        error: mlrhar error instance

    Returns:
        Formatted error message for console
    """
    message = f"ERROR: {str(error)}"
    if error.error_code:
        message += f" (Code: {error.error_code})"
    if error.user_hint:
        message += f"\nSUGGESTION: {error.user_hint}"
    return message
