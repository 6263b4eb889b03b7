"""
Runtime settings for mlrhar.

Settings come from the process environment, optionally seeded from a .env
file by ``env_bootstrap``. Run parameters (model, data, experiment) live in
the JSON run config instead; see ``config_validator``.
"""

import logging
import os
from dataclasses import asdict, dataclass
from typing import Any

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
LOG_FORMATS = ("json", "text")


@dataclass(frozen=True)
class Settings:
    """Process-wide settings."""

    log_level: str
    log_format: str
    threads: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _default_threads() -> int:
    return max(1, os.cpu_count() or 1)


def get_settings(env: dict[str, str] | None = None) -> Settings:
    """
    Read settings from the environment.

    Args:
        env: Mapping to read instead of os.environ

    Returns:
        Settings with invalid values replaced by defaults
    """
    env = dict(os.environ) if env is None else env

    log_level = env.get("LOG_LEVEL", "INFO").strip().upper()
    if log_level not in LOG_LEVELS:
        logger.warning(f"LOG_LEVEL invalid: '{log_level}', using INFO")
        log_level = "INFO"

    log_format = env.get("MLRHAR_LOG_FORMAT", "text").strip().lower()
    if log_format not in LOG_FORMATS:
        logger.warning(f"MLRHAR_LOG_FORMAT invalid: '{log_format}', using text")
        log_format = "text"

    raw_threads = env.get("MLRHAR_THREADS", "").strip()
    threads = _default_threads()
    if raw_threads:
        try:
            threads = max(1, int(raw_threads))
        except ValueError:
            logger.warning(f"MLRHAR_THREADS invalid: '{raw_threads}', using {threads}")

    return Settings(log_level=log_level, log_format=log_format, threads=threads)
