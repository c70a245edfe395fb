"""Extract leader/study/follower platoons from NGSIM-style trajectory tables."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .platoon import PLATOON_FRAMES, Platoon

logger = logging.getLogger(__name__)

# public NGSIM vehicle-trajectory schema; Local_Y is the longitudinal axis
NGSIM_COLUMNS = {
    "vehicle_id": "Vehicle_ID",
    "frame_id": "Frame_ID",
    "position": "Local_Y",
    "speed": "v_Vel",
    "lane_id": "Lane_ID",
    "preceding_id": "Preceding",
    "following_id": "Following",
}
INT_FIELDS = ("vehicle_id", "frame_id", "lane_id", "preceding_id", "following_id")


class NoPlatoonsError(ValueError):
    """Raised when a table yields no qualifying platoon."""


@dataclass
class IngestConfig:
    platoon_frames: int = PLATOON_FRAMES
    column_map: dict = field(default_factory=lambda: dict(NGSIM_COLUMNS))
    sep: str = ","


@dataclass
class IngestReport:
    n_rows: int = 0
    n_rejected: int = 0
    n_platoons: int = 0
    reasons: dict = field(default_factory=dict)


def read_records(source, config: IngestConfig | None = None, report: IngestReport | None = None) -> pd.DataFrame:
    """Load a table into canonical TrajectoryRecord columns.

    ``source`` is a path, file object, or an existing DataFrame. Malformed
    rows are dropped and counted in ``report``.
    """
    config = config or IngestConfig()
    report = report if report is not None else IngestReport()
    if isinstance(source, pd.DataFrame):
        raw = source
    else:
        raw = pd.read_csv(source, sep=config.sep, skipinitialspace=True, dtype=str)
    missing = [c for c in config.column_map.values() if c not in raw.columns]
    if missing:
        raise KeyError(f"table lacks required columns {missing}")
    df = pd.DataFrame({k: pd.to_numeric(raw[v], errors="coerce") for k, v in config.column_map.items()})
    report.n_rows = len(df)

    bad = df.isna().any(axis=1)
    reasons = {"unparseable": int(bad.sum())}
    neg = ~bad & (df["speed"] < 0)
    reasons["negative_speed"] = int(neg.sum())
    nonint = ~bad & (df[list(INT_FIELDS)] % 1 != 0).any(axis=1)
    reasons["non_integer_id"] = int(nonint.sum())
    keep = ~(bad | neg | nonint)
    df = df[keep].copy()
    for c in INT_FIELDS:
        df[c] = df[c].astype(np.int64)
    df["position"] = df["position"].astype(np.float64)
    df["speed"] = df["speed"].astype(np.float64)

    dup = df.duplicated(["vehicle_id", "frame_id"], keep="first")
    reasons["duplicate"] = int(dup.sum())
    df = df[~dup]
    report.n_rejected = sum(reasons.values())
    report.reasons = reasons
    if report.n_rejected:
        logger.warning("rejected %d of %d rows: %s", report.n_rejected, report.n_rows, reasons)
    return df.sort_values(["vehicle_id", "frame_id"]).reset_index(drop=True)


def _runs(mask: np.ndarray):
    """Yield (start, stop) of maximal True runs."""
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1))


def extract_platoons(records: pd.DataFrame, platoon_frames: int = PLATOON_FRAMES) -> list[Platoon]:
    """Find spans where one study vehicle keeps the same leader and follower.

    A span qualifies when for ``platoon_frames`` consecutive frames the study
    vehicle's preceding/following ids are fixed and non-zero, and all three
    vehicles are recorded in the same lane. Long spans are cut into
    non-overlapping chunks.
    """
    by_vehicle = {vid: g for vid, g in records.groupby("vehicle_id", sort=True)}
    lookup = records.set_index(["vehicle_id", "frame_id"])
    platoons = []
    for vid, g in by_vehicle.items():
        frames = g["frame_id"].to_numpy()
        pre = g["preceding_id"].to_numpy()
        fol = g["following_id"].to_numpy()
        lane = g["lane_id"].to_numpy()
        # a new segment starts wherever the triple or lane changes or frames skip
        brk = np.ones(len(g), dtype=bool)
        brk[1:] = ((np.diff(frames) != 1) | (pre[1:] != pre[:-1]) | (fol[1:] != fol[:-1])
                   | (lane[1:] != lane[:-1]))
        seg_id = np.cumsum(brk)
        for s in np.unique(seg_id):
            idx = np.flatnonzero(seg_id == s)
            lead, follow = int(pre[idx[0]]), int(fol[idx[0]])
            if lead == 0 or follow == 0 or len(idx) < platoon_frames:
                continue
            keys_lead = list(zip([lead] * len(idx), frames[idx]))
            keys_fol = list(zip([follow] * len(idx), frames[idx]))
            rows_lead = lookup.reindex(keys_lead)
            rows_fol = lookup.reindex(keys_fol)
            ok = (rows_lead["lane_id"].to_numpy() == lane[idx]) & (rows_fol["lane_id"].to_numpy() == lane[idx])
            for a, b in _runs(ok):
                for c0 in range(a, b - platoon_frames + 1, platoon_frames):
                    sl = slice(c0, c0 + platoon_frames)
                    pos = np.stack([rows_lead["position"].to_numpy()[sl],
                                    g["position"].to_numpy()[idx[sl]],
                                    rows_fol["position"].to_numpy()[sl]])
                    spd = np.stack([rows_lead["speed"].to_numpy()[sl],
                                    g["speed"].to_numpy()[idx[sl]],
                                    rows_fol["speed"].to_numpy()[sl]])
                    if np.any(np.diff(pos, axis=0) >= 0):
                        continue  # ordering broken: not a physical platoon
                    platoons.append(Platoon(pos, spd, platoon_id=len(platoons),
                                            vehicle_ids=(lead, int(vid), follow),
                                            start_frame=int(frames[idx[c0]]),
                                            lane_id=int(lane[idx[c0]])))
    return platoons


def ingest_ngsim(source, config: IngestConfig | None = None, report: IngestReport | None = None) -> list[Platoon]:
    """Read a trajectory table and return every qualifying platoon."""
    config = config or IngestConfig()
    report = report if report is not None else IngestReport()
    records = read_records(source, config, report)
    platoons = extract_platoons(records, config.platoon_frames)
    report.n_platoons = len(platoons)
    if not platoons:
        raise NoPlatoonsError(
            f"no {config.platoon_frames}-frame leader/study/follower platoon found "
            f"in {report.n_rows} rows ({report.n_rejected} rejected)")
    logger.info("found %d platoons (%d trajectories)", len(platoons), 3 * len(platoons))
    return platoons


def platoons_to_table(platoons, column_map: dict | None = None) -> pd.DataFrame:
    """Render platoons back into an NGSIM-schema table (used for fixtures and export)."""
    column_map = column_map or NGSIM_COLUMNS
    rows = []
    for p in platoons:
        ids = p.vehicle_ids
        for r, vid in enumerate(ids):
            n = len(p)
            rows.append(pd.DataFrame({
                "vehicle_id": vid,
                "frame_id": p.start_frame + np.arange(n),
                "position": p.positions[r],
                "speed": p.speeds[r],
                "lane_id": p.lane_id,
                "preceding_id": ids[r - 1] if r > 0 else 0,
                "following_id": ids[r + 1] if r < 2 else 0,
            }))
    df = pd.concat(rows, ignore_index=True)
    return df.rename(columns=column_map)
