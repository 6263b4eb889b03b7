"""Environment variable bootstrap for local mlrhar runs."""

import logging
import os
from pathlib import Path

logger = logging.getLogger(__name__)


def bootstrap_env(start: Path | None = None) -> bool:
    """
    Auto-load a .env file when running locally.

    Conditions for auto-loading:
    - python-dotenv is available
    - MLRHAR_ENV=local (default) or MLRHAR_AUTO_LOAD_ENV=1
    - a .env file exists in the working tree above ``start``

    Returns:
        True if a .env file was loaded
    """
    mlrhar_env = os.getenv("MLRHAR_ENV", "local").lower()
    auto_load = os.getenv("MLRHAR_AUTO_LOAD_ENV", "0") == "1"

    if mlrhar_env != "local" and not auto_load:
        logger.debug("env bootstrap: MLRHAR_ENV is not local, .env ignored")
        return False

    try:
        from dotenv import load_dotenv
    except ImportError:
        logger.debug("env bootstrap: python-dotenv missing, .env ignored")
        return False

    current = (start or Path.cwd()).resolve()
    env_path = None
    for parent in [current, *current.parents]:
        candidate = parent / ".env"
        if candidate.exists():
            env_path = candidate
            break
        if (parent / ".git").exists():
            break

    if env_path is None:
        logger.debug("env bootstrap: no .env between start and repository root")
        return False

    try:
        # existing variables win over the file
        load_dotenv(env_path, override=False)
        logger.info(f"env bootstrap: loaded {env_path}")
        return True
    except Exception as e:
        logger.warning(f"env bootstrap: could not load {env_path}: {e}")
        return False
