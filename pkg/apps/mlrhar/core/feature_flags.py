"""
Runtime switches for mlrhar.

Sources, later ones winning: built-in defaults, MLRHAR_FEATURE_<NAME>
environment variables, the JSON object at MLRHAR_FEATURE_CONFIG_PATH, and
in-memory overrides set through FeatureFlagManager.set_flag.
"""

import json
import logging
import os
from enum import Enum
from pathlib import Path

logger = logging.getLogger(__name__)

ENV_PREFIX = "MLRHAR_FEATURE_"
CONFIG_PATH_VAR = "MLRHAR_FEATURE_CONFIG_PATH"

_TRUTHY = frozenset({"true", "1", "on", "yes"})
_FALSY = frozenset({"false", "0", "off", "no"})


class FeatureFlag(Enum):
    # PGD checks the running-rank constraint after every projection
    RANK_CERTIFICATION = "rank_certification"
    # Replications and BIC grid points go to a thread pool
    PARALLEL_REPLICATIONS = "parallel_replications"

    @property
    def env_var(self) -> str:
        return ENV_PREFIX + self.value.upper()

    @property
    def default(self) -> bool:
        return self is FeatureFlag.PARALLEL_REPLICATIONS


def _parse_switch(raw: str) -> bool | None:
    value = raw.strip().lower()
    if value in _TRUTHY:
        return True
    if value in _FALSY:
        return False
    return None


def _flags_from_env() -> dict[str, bool]:
    found: dict[str, bool] = {}
    for flag in FeatureFlag:
        raw = os.environ.get(flag.env_var)
        if raw is None:
            continue
        parsed = _parse_switch(raw)
        if parsed is None:
            logger.warning(f"Ignoring {flag.env_var}={raw!r}: not a boolean")
        else:
            found[flag.value] = parsed
    return found


def _flags_from_file(path: Path) -> dict[str, bool]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        logger.error(f"Feature flag file {path} unreadable: {e}")
        return {}
    if not isinstance(data, dict):
        logger.error(f"Feature flag file {path} must hold a JSON object")
        return {}

    known = {flag.value for flag in FeatureFlag}
    found: dict[str, bool] = {}
    for name, value in data.items():
        if name in known:
            found[name] = bool(value)
        else:
            logger.warning(f"Unknown feature flag {name!r} in {path}")
    logger.info(f"Feature flags read from {path}")
    return found


class FeatureFlagManager:
    """Resolved flag states for one process."""

    def __init__(self) -> None:
        self._flags = {flag.value: flag.default for flag in FeatureFlag}
        self._flags.update(_flags_from_env())
        config_path = os.environ.get(CONFIG_PATH_VAR)
        if config_path and Path(config_path).is_file():
            self._flags.update(_flags_from_file(Path(config_path)))
        logger.debug(f"Feature flags: {self._flags}")

    def is_enabled(self, flag: FeatureFlag) -> bool:
        return self._flags.get(flag.value, flag.default)

    def set_flag(self, flag: FeatureFlag, enabled: bool) -> None:
        """Override a flag in memory for the rest of the process."""
        self._flags[flag.value] = enabled
        logger.info(f"Feature flag {flag.value} forced to {enabled}")

    def get_all_flags(self) -> dict[str, bool]:
        return dict(self._flags)


_manager: FeatureFlagManager | None = None


def get_feature_manager() -> FeatureFlagManager:
    global _manager
    if _manager is None:
        _manager = FeatureFlagManager()
    return _manager


def reset_feature_manager() -> None:
    """Drop the cached manager so the next lookup rereads env and file."""
    global _manager
    _manager = None


def is_feature_enabled(flag: FeatureFlag) -> bool:
    return get_feature_manager().is_enabled(flag)
