"""Shared builders for mlrhar tests."""

import json
from pathlib import Path
from typing import Any

import numpy as np

from apps.mlrhar.core.diffusion_sim import MeasureKind, RealizedPanel
from apps.mlrhar.core.har_model import InnovationSpec, VarCoefficients, generate_var
from apps.mlrhar.core.tensor_core import Tensor3, TuckerFactors
from apps.mlrhar.io.panels import write_panel

EXACT_RANKS = (2, 2, 3)
EXACT_N = 5
EXACT_P = 4
# keeps the row sums of lag norms at 0.9, so the VAR is stationary
EXACT_SCALE = 0.3
# added before writing RV panels so every cell is positive
PANEL_OFFSET = 10.0


def orthonormal(rows: int, cols: int, seed: int) -> np.ndarray:
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((rows, cols)))
    return q


def exact_rank_tucker(seed: int = 11) -> TuckerFactors:
    """
    Rank-(2, 2, 3) lag tensor for N=5, P=4.

    Core slices are scaled I, a rotation and a reflection; lag j uses slice j
    for j = 1, 2, 3 and lag 4 is zero, so every lag matrix has norm 0.3.
    """
    slices = [
        np.eye(2),
        np.array([[0.0, 1.0], [-1.0, 0.0]]),
        np.array([[1.0, 0.0], [0.0, -1.0]]),
    ]
    core = Tensor3(EXACT_SCALE * np.stack(slices, axis=2))
    u3 = np.eye(EXACT_P)[:, :3]
    return TuckerFactors(
        core=core,
        factors=(orthonormal(EXACT_N, 2, seed), orthonormal(EXACT_N, 2, seed + 1), u3),
    )


def exact_rank_coefficients(seed: int = 11) -> VarCoefficients:
    return VarCoefficients(exact_rank_tucker(seed).reconstruct())


def exact_rank_panel(n_days: int, seed: int = 5) -> RealizedPanel:
    """Centered VAR sample with unit innovations from the exact-rank tensor."""
    coeffs = exact_rank_coefficients()
    return generate_var(coeffs, InnovationSpec.identity(EXACT_N), n_days, seed)


def write_offset_panel(panel: RealizedPanel, path: Path) -> Path:
    """Write a synthetic panel shifted into positive values as an RV CSV."""
    shifted = RealizedPanel(values=panel.values + PANEL_OFFSET, measure_kind=MeasureKind.RV)
    return write_panel(shifted, path)


def alternating_panel(n_days: int, low: float = 1.0, high: float = 3.0) -> RealizedPanel:
    """One-asset RV panel low, high, low, ... which y_n = y_{n-2} forecasts exactly."""
    values = np.where(np.arange(n_days) % 2 == 0, low, high)[:, None]
    return RealizedPanel(values=values, measure_kind=MeasureKind.RV)


def positive_panel(n_days: int, n_assets: int, seed: int = 3) -> RealizedPanel:
    rng = np.random.default_rng(seed)
    return RealizedPanel(
        values=rng.uniform(0.5, 2.0, (n_days, n_assets)), measure_kind=MeasureKind.RV
    )


def random_centered_panel(n_days: int, n_assets: int, seed: int = 1) -> RealizedPanel:
    values = np.random.default_rng(seed).standard_normal((n_days, n_assets))
    return RealizedPanel(values=values, measure_kind=MeasureKind.SYNTHETIC, centered=True)


def univariate_spec_block(jump_intensity: float = 0.0) -> dict[str, Any]:
    return {
        "omega": [0.2],
        "alpha": [[[0.3]], [[0.1]]],
        "v": [0.4],
        "jump_intensity": [jump_intensity],
        "jump_variance": 0.01,
    }


def write_config(path: Path, data: dict[str, Any]) -> Path:
    path.write_text(json.dumps(data), encoding="utf-8")
    return path
