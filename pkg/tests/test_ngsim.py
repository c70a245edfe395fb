import io

import numpy as np
import pandas as pd
import pytest

from crossfusor.ngsim import (
    IngestConfig,
    IngestReport,
    NoPlatoonsError,
    ingest_ngsim,
    platoons_to_table,
)
from crossfusor.platoon import Platoon, window_platoons


def triple(n=200, start=1000, ids=(11, 12, 13), lane=3):
    t = np.arange(n) / 10
    x = np.stack([300 + 35 * t, 250 + 35 * t, 200 + 35 * t])
    return Platoon(x, np.full((3, n), 35.0), vehicle_ids=ids, start_frame=start, lane_id=lane)


def test_single_valid_triple():
    table = platoons_to_table([triple()])
    platoons = ingest_ngsim(table)
    assert len(platoons) == 1
    p = platoons[0]
    assert p.vehicle_ids == (11, 12, 13) and len(p) == 200 and p.start_frame == 1000
    assert 3 * len(platoons) == 3
    np.testing.assert_allclose(p.positions, triple().positions)


def test_csv_round_trip():
    buf = io.StringIO()
    platoons_to_table([triple()]).to_csv(buf, index=False)
    buf.seek(0)
    assert len(ingest_ngsim(buf)) == 1


def test_follower_lane_change_breaks_platoon():
    table = platoons_to_table([triple()])
    fol = (table["Vehicle_ID"] == 13) & (table["Frame_ID"] >= 1150)
    table.loc[fol, "Lane_ID"] = 4
    with pytest.raises(NoPlatoonsError):
        ingest_ngsim(table)


def test_malformed_rows_counted():
    table = platoons_to_table([triple()]).astype(object)
    table.loc[5, "v_Vel"] = "abc"
    table.loc[7, "v_Vel"] = -3.0
    extra = table.iloc[[0]].copy()
    table = pd.concat([table, extra], ignore_index=True)
    report = IngestReport()
    with pytest.raises(NoPlatoonsError):
        # the leader now misses two frames, so the 200-frame run is broken
        ingest_ngsim(table, report=report)
    assert report.n_rejected == 3
    assert report.reasons["unparseable"] == 1 and report.reasons["negative_speed"] == 1
    assert report.reasons["duplicate"] == 1


def test_long_run_chunks_and_windows():
    platoons = ingest_ngsim(platoons_to_table([triple(n=450)]))
    assert len(platoons) == 2
    assert [p.start_frame for p in platoons] == [1000, 1200]
    assert len(window_platoons(platoons, 10)) == 26


def test_custom_column_map():
    cols = {"vehicle_id": "vid", "frame_id": "f", "position": "y", "speed": "v",
            "lane_id": "lane", "preceding_id": "pre", "following_id": "fol"}
    table = platoons_to_table([triple()], column_map=cols)
    assert len(ingest_ngsim(table, IngestConfig(column_map=cols))) == 1


def test_missing_column():
    table = platoons_to_table([triple()]).drop(columns=["Lane_ID"])
    with pytest.raises(KeyError):
        ingest_ngsim(table)


def test_two_independent_platoons():
    a = triple(ids=(1, 2, 3))
    b = triple(ids=(7, 8, 9), lane=5)
    assert len(ingest_ngsim(platoons_to_table([a, b]))) == 2
