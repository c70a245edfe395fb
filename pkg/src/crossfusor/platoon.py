"""Platoon trajectories, sliding windows, splits and normalization.

Units are fixed throughout: feet, feet per second, 10 Hz frames.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

FRAME_RATE_HZ = 10
HISTORY_FRAMES = 30
FUTURE_FRAMES = 50
PLATOON_FRAMES = 200

# channel order of the history tensor, shape (n, H, 8)
CHANNELS = ("x_lea", "v_lea", "x_stu", "v_stu", "x_fol", "v_fol", "dx1", "dx2")
POSITION_CHANNELS = ("x_lea", "x_stu", "x_fol")
CH = {name: i for i, name in enumerate(CHANNELS)}


@dataclass
class TrajectoryRecord:
    vehicle_id: int
    frame_id: int
    position: float
    speed: float
    lane_id: int
    preceding_id: int = 0
    following_id: int = 0


@dataclass
class Platoon:
    """Leader, study and follower trajectories over a common frame range.

    ``positions`` and ``speeds`` have shape (3, T), rows ordered
    (leader, study, follower).
    """

    positions: np.ndarray
    speeds: np.ndarray
    platoon_id: int = 0
    vehicle_ids: tuple[int, int, int] = (0, 0, 0)
    start_frame: int = 0
    lane_id: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.speeds = np.asarray(self.speeds, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[0] != 3:
            raise ValueError(f"positions must have shape (3, T), got {self.positions.shape}")
        if self.speeds.shape != self.positions.shape:
            raise ValueError("speeds and positions must share a shape")

    def __len__(self):
        return self.positions.shape[1]

    @property
    def gaps(self) -> np.ndarray:
        """(2, T) array of leader-study and study-follower spacing."""
        return -np.diff(self.positions, axis=0)


@dataclass
class PlatoonWindow:
    x_lea_his: np.ndarray
    x_stu_his: np.ndarray
    x_fol_his: np.ndarray
    v_lea_his: np.ndarray
    v_stu_his: np.ndarray
    v_fol_his: np.ndarray
    dx1_his: np.ndarray
    dx2_his: np.ndarray
    x_stu_fut: np.ndarray
    meta: dict = field(default_factory=dict)

    def history_array(self) -> np.ndarray:
        return np.stack([getattr(self, f"{c}_his") for c in CHANNELS], axis=-1)

    @classmethod
    def from_arrays(cls, history, future, meta=None):
        cols = {f"{c}_his": np.asarray(history[:, i], dtype=np.float64) for i, c in enumerate(CHANNELS)}
        return cls(**cols, x_stu_fut=np.asarray(future, dtype=np.float64), meta=dict(meta or {}))


@dataclass
class WindowSet:
    """A stack of windows held as dense arrays.

    history: (n, H, 8) in ``CHANNELS`` order; future: (n, F) study-vehicle
    positions; platoon_id / start_frame: (n,) provenance.
    """

    history: np.ndarray
    future: np.ndarray
    platoon_id: np.ndarray
    start_frame: np.ndarray

    def __post_init__(self):
        self.history = np.asarray(self.history, dtype=np.float64)
        self.future = np.asarray(self.future, dtype=np.float64)
        self.platoon_id = np.asarray(self.platoon_id, dtype=np.int64)
        self.start_frame = np.asarray(self.start_frame, dtype=np.int64)
        n = len(self.history)
        if self.history.ndim != 3 or self.history.shape[2] != len(CHANNELS):
            raise ValueError(f"history must have shape (n, H, {len(CHANNELS)}), got {self.history.shape}")
        if self.future.ndim != 2 or len(self.future) != n:
            raise ValueError("future must have shape (n, F) matching history")
        if len(self.platoon_id) != n or len(self.start_frame) != n:
            raise ValueError("provenance arrays must have one entry per window")

    def __len__(self):
        return len(self.history)

    @property
    def history_frames(self) -> int:
        return self.history.shape[1]

    @property
    def future_frames(self) -> int:
        return self.future.shape[1]

    def __getitem__(self, idx) -> WindowSet:
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return WindowSet(self.history[idx], self.future[idx], self.platoon_id[idx], self.start_frame[idx])

    def window(self, i: int) -> PlatoonWindow:
        meta = {"platoon_id": int(self.platoon_id[i]), "start_frame": int(self.start_frame[i])}
        return PlatoonWindow.from_arrays(self.history[i], self.future[i], meta)

    @classmethod
    def concat(cls, sets) -> WindowSet:
        sets = list(sets)
        return cls(
            np.concatenate([s.history for s in sets]),
            np.concatenate([s.future for s in sets]),
            np.concatenate([s.platoon_id for s in sets]),
            np.concatenate([s.start_frame for s in sets]),
        )


def count_windows(length: int, stride: int, history: int = HISTORY_FRAMES, future: int = FUTURE_FRAMES) -> int:
    span = history + future
    if length < span:
        return 0
    return (length - span) // stride + 1


def window_platoons(platoons, stride_frames: int = 10, history: int = HISTORY_FRAMES,
                    future: int = FUTURE_FRAMES) -> WindowSet:
    """Cut each platoon into sliding (history, future) windows."""
    if stride_frames < 1:
        raise ValueError(f"stride must be >= 1, got {stride_frames}")
    span = history + future
    hist, fut, pid, start = [], [], [], []
    for p in platoons:
        n = count_windows(len(p), stride_frames, history, future)
        if n == 0:
            logger.warning("platoon %s has %d frames (< %d), skipped", p.platoon_id, len(p), span)
            continue
        gaps = p.gaps
        for w in range(n):
            s = w * stride_frames
            sl = slice(s, s + history)
            h = np.stack([
                p.positions[0, sl], p.speeds[0, sl],
                p.positions[1, sl], p.speeds[1, sl],
                p.positions[2, sl], p.speeds[2, sl],
                gaps[0, sl], gaps[1, sl],
            ], axis=-1)
            hist.append(h)
            fut.append(p.positions[1, s + history:s + span])
            pid.append(p.platoon_id)
            start.append(p.start_frame + s)
    if not hist:
        return WindowSet(np.zeros((0, history, len(CHANNELS))), np.zeros((0, future)), [], [])
    return WindowSet(np.stack(hist), np.stack(fut), pid, start)


def check_window_invariants(windows: WindowSet) -> None:
    h = windows.history
    if not np.all(np.isfinite(h)) or not np.all(np.isfinite(windows.future)):
        raise ValueError("windows contain non-finite values")
    if np.any(h[..., CH["dx1"]] <= 0) or np.any(h[..., CH["dx2"]] <= 0):
        raise ValueError("non-positive gap in window history")
    if not np.allclose(h[..., CH["dx1"]], h[..., CH["x_lea"]] - h[..., CH["x_stu"]], rtol=0, atol=1e-6):
        raise ValueError("dx1 inconsistent with leader/study positions")
    if not np.allclose(h[..., CH["dx2"]], h[..., CH["x_stu"]] - h[..., CH["x_fol"]], rtol=0, atol=1e-6):
        raise ValueError("dx2 inconsistent with study/follower positions")


def split_train_test(windows: WindowSet, ratio: float = 0.9, seed: int = 0) -> tuple[WindowSet, WindowSet]:
    """Split by source platoon so no platoon lands in both halves."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    ids = np.unique(windows.platoon_id)
    if len(ids) < 2:
        raise ValueError(f"need at least 2 platoons to split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    ids = rng.permutation(ids)
    n_train = min(max(int(round(ratio * len(ids))), 1), len(ids) - 1)
    train_ids = np.sort(ids[:n_train])
    mask = np.isin(windows.platoon_id, train_ids)
    return windows[np.flatnonzero(mask)], windows[np.flatnonzero(~mask)]


FUTURE_REFERENCES = ("constant_velocity", "anchor")


@dataclass
class NormalizationStats:
    """Per-channel shift/scale fitted on the training split.

    Positions are first re-expressed relative to the study vehicle's last
    history position. History position channels are then scaled without a
    shift so the anchor stays at exactly 0; speeds and gaps are
    standardized. The future is taken relative to a reference trajectory
    (by default the constant-speed extrapolation from the last history
    frame, or the anchor alone) and standardized per frame.
    """

    history_shift: np.ndarray
    history_scale: np.ndarray
    future_shift: np.ndarray
    future_scale: np.ndarray
    future_reference: str = "constant_velocity"

    def __post_init__(self):
        for name in ("history_shift", "history_scale", "future_shift", "future_scale"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.history_scale <= 0) or np.any(self.future_scale <= 0):
            raise ValueError("normalization scales must be positive")
        if self.future_reference not in FUTURE_REFERENCES:
            raise ValueError(f"future_reference must be one of {FUTURE_REFERENCES}")

    @staticmethod
    def anchor(history: np.ndarray) -> np.ndarray:
        return np.array(np.asarray(history)[..., -1, CH["x_stu"]], dtype=np.float64)

    def reference(self, history: np.ndarray, n_future: int | None = None) -> np.ndarray:
        """(..., F) trajectory the normalized future is measured against."""
        n_future = len(self.future_shift) if n_future is None else n_future
        history = np.asarray(history, dtype=np.float64)
        x = history[..., -1, CH["x_stu"]][..., None]
        if self.future_reference == "anchor":
            return np.repeat(x, n_future, axis=-1)
        v = history[..., -1, CH["v_stu"]][..., None]
        return x + v * np.arange(1, n_future + 1) / FRAME_RATE_HZ

    def transform_history(self, history: np.ndarray) -> np.ndarray:
        h = np.array(history, dtype=np.float64, copy=True)
        a = self.anchor(h)[..., None]
        for c in POSITION_CHANNELS:
            h[..., CH[c]] -= a
        return (h - self.history_shift) / self.history_scale

    def inverse_history(self, z: np.ndarray, anchor: np.ndarray) -> np.ndarray:
        h = np.asarray(z, dtype=np.float64) * self.history_scale + self.history_shift
        a = np.asarray(anchor, dtype=np.float64)[..., None]
        for c in POSITION_CHANNELS:
            h[..., CH[c]] += a
        return h

    @staticmethod
    def _broadcast_ref(ref, like):
        ref = np.asarray(ref, dtype=np.float64)
        return ref[..., None] if ref.ndim < np.ndim(like) else ref

    def transform_future(self, future: np.ndarray, reference: np.ndarray) -> np.ndarray:
        """``reference`` is a (..., F) trajectory from :meth:`reference` or a
        per-window anchor offset of shape (...)."""
        future = np.asarray(future, dtype=np.float64)
        return (future - self._broadcast_ref(reference, future) - self.future_shift) / self.future_scale

    def inverse_future(self, z: np.ndarray, reference: np.ndarray) -> np.ndarray:
        rel = np.asarray(z, dtype=np.float64) * self.future_scale + self.future_shift
        return rel + self._broadcast_ref(reference, rel)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in
             ("history_shift", "history_scale", "future_shift", "future_scale")}
        d["future_reference"] = self.future_reference
        return d

    @classmethod
    def from_dict(cls, d: dict) -> NormalizationStats:
        d = dict(d)
        ref = d.pop("future_reference", "anchor")
        return cls(**{k: np.asarray(v) for k, v in d.items()}, future_reference=ref)


def _safe_scale(values, names, clamped: list) -> np.ndarray:
    values = np.atleast_1d(np.asarray(values, dtype=np.float64)).copy()
    bad = ~np.isfinite(values) | (values < 1e-12)
    clamped.extend(n for n, b in zip(names, bad) if b)
    values[bad] = 1.0
    return values


def fit_normalization(history: np.ndarray, future: np.ndarray,
                      future_reference: str = "constant_velocity") -> NormalizationStats:
    history = np.asarray(history, dtype=np.float64)
    future = np.asarray(future, dtype=np.float64)
    if len(history) == 0:
        raise ValueError("cannot fit normalization on an empty training split")
    anchor = NormalizationStats.anchor(history)
    rel = history.copy()
    for c in POSITION_CHANNELS:
        rel[..., CH[c]] -= anchor[:, None]
    clamped = []
    shift = np.zeros(len(CHANNELS))
    scale = np.ones(len(CHANNELS))
    for name, i in CH.items():
        col = rel[..., i]
        if name in POSITION_CHANNELS:
            scale[i] = _safe_scale(np.sqrt(np.mean(col ** 2)), [name], clamped)[0]
        else:
            shift[i] = col.mean()
            scale[i] = _safe_scale(col.std(), [name], clamped)[0]
    partial = NormalizationStats(shift, scale, np.zeros(future.shape[1]), np.ones(future.shape[1]),
                                 future_reference)
    fut = future - partial.reference(history, future.shape[1])
    f_shift = fut.mean(axis=0)
    f_scale = _safe_scale(fut.std(axis=0), [f"future[{j}]" for j in range(fut.shape[1])], clamped)
    if clamped:
        shown = ", ".join(clamped[:6]) + (f" and {len(clamped) - 6} more" if len(clamped) > 6 else "")
        logger.warning("zero-variance channels %s; scale clamped to 1", shown)
    return NormalizationStats(shift, scale, f_shift, f_scale, future_reference)


# persistence: a .npz of named arrays plus a JSON sidecar

def save_windows(path, windows: WindowSet, stats: NormalizationStats | None = None, meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, history=windows.history, future=windows.future,
             platoon_id=windows.platoon_id, start_frame=windows.start_frame)
    sidecar = {
        "format": "crossfusor-windows",
        "format_version": 1,
        "channels": list(CHANNELS),
        "units": {"position": "ft", "speed": "ft/s", "frame_rate_hz": FRAME_RATE_HZ},
        "n_windows": len(windows),
        "history_frames": windows.history_frames,
        "future_frames": windows.future_frames,
        "n_platoons": int(len(np.unique(windows.platoon_id))),
        "normalization": stats.to_dict() if stats is not None else None,
        **(meta or {}),
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2))
    return path


def _sidecar_path(path: Path) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_name(path.name + ".npz")
    return path.with_suffix(".json")


def load_windows(path) -> tuple[WindowSet, dict]:
    path = Path(path)
    with np.load(path) as z:
        ws = WindowSet(z["history"], z["future"], z["platoon_id"], z["start_frame"])
    side = _sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return ws, meta
