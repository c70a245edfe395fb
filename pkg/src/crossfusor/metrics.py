"""Displacement metrics for 1-D longitudinal trajectory forecasts (feet)."""
from __future__ import annotations

import numpy as np

from .platoon import FRAME_RATE_HZ

HORIZON_SECONDS = (1, 2, 3, 4, 5)


def _pair(truth, pred):
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch: truth {truth.shape} vs prediction {pred.shape}")
    return truth, pred


def rmse(truth, pred, horizon: int | None = None) -> float:
    """Root of the mean squared error over the first ``horizon`` frames.

    Multiple windows (2-D input) are pooled: the mean runs over windows and
    frames before the root.
    """
    truth, pred = _pair(truth, pred)
    err = (truth - pred)[..., :horizon]
    return float(np.sqrt(np.mean(err ** 2)))


def fde(truth, pred, horizon: int | None = None) -> float:
    """Absolute error at the horizon's final frame, averaged over windows."""
    truth, pred = _pair(truth, pred)
    h = truth.shape[-1] if horizon is None else horizon
    return float(np.mean(np.abs(truth[..., h - 1] - pred[..., h - 1])))


def ade(truth, pred, horizon: int | None = None) -> float:
    """Mean absolute error over the first ``horizon`` frames and all windows."""
    truth, pred = _pair(truth, pred)
    return float(np.mean(np.abs(truth - pred)[..., :horizon]))


def horizon_frames(seconds=HORIZON_SECONDS, rate: int = FRAME_RATE_HZ) -> list[int]:
    return [int(round(s * rate)) for s in seconds]


def horizon_metrics(truth, pred, seconds=HORIZON_SECONDS) -> dict:
    """{'rmse': [...], 'fde': [...], 'ade': [...]} across the requested horizons."""
    truth, pred = _pair(truth, pred)
    frames = horizon_frames(seconds)
    if max(frames) > truth.shape[-1]:
        raise ValueError(f"horizon {max(frames)} frames exceeds prediction length {truth.shape[-1]}")
    return {
        "rmse": [rmse(truth, pred, h) for h in frames],
        "fde": [fde(truth, pred, h) for h in frames],
        "ade": [ade(truth, pred, h) for h in frames],
    }
