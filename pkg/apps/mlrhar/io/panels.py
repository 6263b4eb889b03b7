"""
CSV and JSON codecs for panels, coefficients and run manifests.

Panels use the long form ``day,asset,value`` with 1-based days and assets;
the wide form (one column per asset after ``day``) is accepted on input.
High-frequency prices use the same long form with ``day`` holding the
fractional time k / steps_per_day.
"""

import hashlib
import json
import logging
from collections.abc import Iterable
from datetime import datetime, timezone

UTC = timezone.utc
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .. import __version__
from ..core.diffusion_sim import HighFreqPanel, MeasureKind, RealizedPanel
from ..core.errors import DimensionError, PanelFormatError
from ..core.estimators import FitResult
from ..core.tensor_core import Tensor3, fold, matricize

logger = logging.getLogger(__name__)

LONG_COLUMNS = ["day", "asset", "value"]
MANIFEST_NAME = "manifest.json"
TOOL_NAME = "mlrhar"
# data rows start on line 2, after the header
FIRST_DATA_LINE = 2


def _read_csv(path: Path, **kwargs: Any) -> pd.DataFrame:
    try:
        return pd.read_csv(path, skipinitialspace=True, **kwargs)
    except FileNotFoundError:
        raise PanelFormatError(f"no such file: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise PanelFormatError(f"{path}: {e}")


def _numeric(frame: pd.DataFrame, column: str, first_line: int) -> pd.Series:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = np.flatnonzero(~np.isfinite(values.to_numpy(dtype=float)))
    if bad.size:
        raw = frame[column].iloc[bad[0]]
        line = first_line + int(bad[0])
        raise PanelFormatError(f"{column} '{raw}' is not a finite number", line=line)
    return values


def _index_column(frame: pd.DataFrame, column: str, first_line: int) -> np.ndarray:
    values = _numeric(frame, column, first_line).to_numpy(dtype=float)
    bad = np.flatnonzero((values != np.round(values)) | (values < 1))
    if bad.size:
        raise PanelFormatError(
            f"{column} must be a positive integer, got {frame[column].iloc[bad[0]]}",
            line=first_line + int(bad[0]),
        )
    return values.astype(int)


def _long_to_matrix(frame: pd.DataFrame, first_line: int = FIRST_DATA_LINE) -> np.ndarray:
    days = _index_column(frame, "day", first_line)
    assets = _index_column(frame, "asset", first_line)
    values = _numeric(frame, "value", first_line).to_numpy(dtype=float)
    n_days, n_assets = int(days.max()), int(assets.max())
    matrix = np.full((n_days, n_assets), np.nan)
    seen = np.zeros((n_days, n_assets), dtype=bool)
    for row, (d, a, v) in enumerate(zip(days, assets, values, strict=True)):
        if seen[d - 1, a - 1]:
            raise PanelFormatError(f"duplicate entry for day {d}, asset {a}", line=first_line + row)
        seen[d - 1, a - 1] = True
        matrix[d - 1, a - 1] = v
    missing = np.argwhere(~seen)
    if missing.size:
        d, a = missing[0] + 1
        raise PanelFormatError(f"no value for day {d}, asset {a}")
    return matrix


def read_panel(
    path: Path,
    measure_kind: MeasureKind | str = MeasureKind.RV,
    wide: bool = False,
    m: int | None = None,
) -> RealizedPanel:
    """
    Load an uncentered daily panel.

    Raises:
        PanelFormatError: Header or cell problems, with the offending line
    """
    frame = _read_csv(Path(path))
    if frame.empty:
        raise PanelFormatError(f"{path}: no data rows")
    if wide:
        if frame.columns[0] != "day" or len(frame.columns) < 2:
            raise PanelFormatError("wide panels need 'day' followed by asset columns", line=1)
        days = _index_column(frame, "day", FIRST_DATA_LINE)
        if not np.array_equal(days, np.arange(1, len(days) + 1)):
            first = int(np.argmax(days != np.arange(1, len(days) + 1)))
            raise PanelFormatError("days must run 1, 2, ... in order", line=FIRST_DATA_LINE + first)
        matrix = np.column_stack(
            [_numeric(frame, c, FIRST_DATA_LINE).to_numpy(dtype=float) for c in frame.columns[1:]]
        )
    else:
        if list(frame.columns) != LONG_COLUMNS:
            raise PanelFormatError(f"header must be {','.join(LONG_COLUMNS)}", line=1)
        matrix = _long_to_matrix(frame)
    logger.info(f"Read {matrix.shape[0]} days x {matrix.shape[1]} assets from {path}")
    return RealizedPanel(values=matrix, measure_kind=MeasureKind(measure_kind), m=m)


def panel_frame(values: np.ndarray, day_scale: int = 1) -> pd.DataFrame:
    """Long frame of a T x N matrix; row t gets day (t + 1) / day_scale."""
    t, n = values.shape
    rows = np.repeat(np.arange(t), n)
    return pd.DataFrame(
        {
            "day": (rows + 1) / day_scale if day_scale != 1 else rows + 1,
            "asset": np.tile(np.arange(1, n + 1), t),
            "value": values.ravel(),
        }
    )


def write_panel(panel: RealizedPanel, path: Path) -> Path:
    panel_frame(panel.values).to_csv(path, index=False, float_format="%.17g")
    return path


def write_high_freq(panel: HighFreqPanel, path: Path) -> Path:
    """Log prices on the step grid, day = k / steps_per_day for k = 0 .. T * steps."""
    prices = panel.log_prices
    t, n = prices.shape
    rows = np.repeat(np.arange(t), n)
    frame = pd.DataFrame(
        {
            "day": rows / panel.steps_per_day,
            "asset": np.tile(np.arange(1, n + 1), t),
            "value": prices.ravel(),
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def write_coefficients(tensor: Tensor3, path: Path, method: str | None = None) -> Path:
    """
    N x (N P) mode-1 unfolding (A_1, ..., A_P), one matrix row per line,
    under a '# N=..,P=..' header line.
    """
    n, _, p = tensor.dims
    header = f"# N={n},P={p}" + (f",method={method}" if method else "")
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        pd.DataFrame(matricize(tensor, 1)).to_csv(
            f, index=False, header=False, float_format="%.17g"
        )
    return path


def _coefficient_header(path: Path) -> tuple[int, int]:
    try:
        with open(path, encoding="utf-8") as f:
            first = f.readline().strip()
    except FileNotFoundError:
        raise PanelFormatError(f"no such file: {path}")
    if not first.startswith("#"):
        raise PanelFormatError("coefficient files start with '# N=..,P=..'", line=1)
    fields = dict(item.split("=", 1) for item in first.lstrip("# ").split(",") if "=" in item)
    try:
        n, p = int(fields["N"]), int(fields["P"])
    except (KeyError, ValueError):
        raise PanelFormatError(f"bad coefficient header '{first}'", line=1)
    if n < 1 or p < 1:
        raise PanelFormatError(f"N and P must be positive in '{first}'", line=1)
    return n, p


def read_coefficients(path: Path) -> Tensor3:
    """Inverse of write_coefficients."""
    path = Path(path)
    n, p = _coefficient_header(path)
    frame = _read_csv(path, skiprows=1, header=None)
    if frame.shape != (n, n * p):
        raise DimensionError(
            f"coefficient file {path} holds a {frame.shape[0]} x {frame.shape[1]} matrix, "
            f"header N={n}, P={p} needs {n} x {n * p}"
        )
    matrix = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = np.argwhere(~np.isfinite(matrix))
    if bad.size:
        row, col = (int(i) for i in bad[0])
        raise PanelFormatError(
            f"entry {col + 1} '{frame.iat[row, col]}' is not a finite number",
            line=FIRST_DATA_LINE + row,
        )
    return fold(matrix, 1, (n, n, p))


def write_fit_sidecar(fit: FitResult, path: Path, extra: dict[str, Any] | None = None) -> Path:
    payload = fit.to_dict()
    if extra:
        payload.update(extra)
    write_json(payload, path)
    return path


def write_json(payload: Any, path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return str(value)


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(config: dict[str, Any]) -> str:
    """sha256 of the config serialized with sorted keys."""
    text = json.dumps(config, sort_keys=True, default=_json_default)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(
    out_dir: Path,
    subcommand: str,
    config: dict[str, Any],
    seed: int | None,
    files: Iterable[Path],
    run_id: str | None = None,
    extra: dict[str, Any] | None = None,
) -> Path:
    """manifest.json with tool version, config hash, seed and a checksum per output file."""
    manifest: dict[str, Any] = {
        "tool": TOOL_NAME,
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "run_id": run_id,
        "created_at": datetime.now(UTC).isoformat(),
        "files": {Path(f).name: sha256_file(Path(f)) for f in files},
    }
    if extra:
        manifest.update(extra)
    return write_json(manifest, Path(out_dir) / MANIFEST_NAME)
