"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np

from .platoon import CHANNELS


def check_history(X, history_frames: int | None = None) -> np.ndarray:
    """Validate an (n, H, 8) history array; returns a float64 copy-free view."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != len(CHANNELS):
        raise ValueError(f"expected history of shape (n, H, {len(CHANNELS)}), got {X.shape}")
    if len(X) == 0:
        raise ValueError("empty history array")
    if history_frames is not None and X.shape[1] != history_frames:
        raise ValueError(f"expected {history_frames} history frames, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("history contains non-finite values")
    return X


def check_future(y, n_samples: int, future_frames: int | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or len(y) != n_samples:
        raise ValueError(f"expected future of shape ({n_samples}, F), got {y.shape}")
    if future_frames is not None and y.shape[1] != future_frames:
        raise ValueError(f"expected {future_frames} future frames, got {y.shape[1]}")
    if not np.all(np.isfinite(y)):
        raise ValueError("future contains non-finite values")
    return y
