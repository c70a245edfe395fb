"""Constant-velocity Kalman filter baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .platoon import CH, FRAME_RATE_HZ
from .validation import check_history


@dataclass
class KalmanCV:
    """Filter state (position, speed) under a constant-velocity model.

    Measures both position and speed each frame. Process noise follows the
    white-acceleration model with spectral density ``accel_noise``.
    """

    dt: float = 1.0 / FRAME_RATE_HZ
    accel_noise: float = 4.0     # (ft/s^2)^2 per s
    pos_noise: float = 1.0       # ft^2
    speed_noise: float = 4.0     # (ft/s)^2

    def matrices(self):
        dt = self.dt
        F = np.array([[1.0, dt], [0.0, 1.0]])
        q = self.accel_noise
        Q = q * np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]])
        R = np.diag([self.pos_noise, self.speed_noise])
        return F, Q, R

    def filter(self, positions, speeds):
        """Run the filter over a history; return the final state and covariance."""
        F, Q, R = self.matrices()
        H = np.eye(2)
        x = np.array([positions[0], speeds[0]], dtype=np.float64)
        P = R.copy()
        for z in zip(positions[1:], speeds[1:]):
            x = F @ x
            P = F @ P @ F.T + Q
            S = H @ P @ H.T + R
            gain = np.linalg.solve(S.T, (P @ H.T).T).T
            x = x + gain @ (np.asarray(z) - H @ x)
            P = (np.eye(2) - gain @ H) @ P
        return x, P

    def forecast(self, positions, speeds, n_frames: int) -> np.ndarray:
        x, _ = self.filter(positions, speeds)
        t = np.arange(1, n_frames + 1) * self.dt
        return x[0] + x[1] * t


def cv_baseline(history, n_future: int = 50, kf: KalmanCV | None = None) -> np.ndarray:
    """Predict study-vehicle positions for one (H, 8) history window."""
    kf = kf or KalmanCV()
    history = np.asarray(history, dtype=np.float64)
    return kf.forecast(history[:, CH["x_stu"]], history[:, CH["v_stu"]], n_future)


class ConstantVelocityRegressor(BaseEstimator, RegressorMixin):
    """Estimator wrapper so the baseline plugs into the same evaluation path."""

    def __init__(self, n_future=50, accel_noise=4.0, pos_noise=1.0, speed_noise=4.0):
        self.n_future = n_future
        self.accel_noise = accel_noise
        self.pos_noise = pos_noise
        self.speed_noise = speed_noise

    def fit(self, X, y=None):
        check_history(X)
        if y is not None:
            self.n_future_ = np.asarray(y).shape[1]
        else:
            self.n_future_ = self.n_future
        return self

    def predict(self, X):
        X = check_history(X)
        kf = KalmanCV(accel_noise=self.accel_noise, pos_noise=self.pos_noise, speed_noise=self.speed_noise)
        n = getattr(self, "n_future_", self.n_future)
        return np.stack([cv_baseline(h, n, kf) for h in X])
