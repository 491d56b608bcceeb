"""NGSIM-format CSV ingestion.

Reads trajectory CSVs in the US-101/I-80 column layout (10 Hz frames,
feet units by default), resolves scalar speed/acceleration into 2-D
global-frame vectors along the finite-difference heading, and emits
AgentTracks on the shared 0.1 s grid.

A vehicle with a gap in its frame sequence is split into contiguous
segments (segment k of vehicle v gets agent id v * 100000 + k) rather than
rejected; duplicate frames for a vehicle are a data error.
"""
from __future__ import annotations

import numpy as np
import pandas as pd

from ..errors import DataError, SchemaError
from ..motion import vdm_transform
from .types import AgentTrack

FRAME_DT = 0.1
FOOT = 0.3048

DEFAULT_COLUMNS = {
    "vehicle_id": "Vehicle_ID",
    "frame": "Frame_ID",
    "x": "Local_X",
    "y": "Local_Y",
    "speed": "v_Vel",
    "accel": "v_Acc",
    "width": "v_Width",
    "length": "v_Length",
    "lane": "Lane_ID",
}


def _headings(pos: np.ndarray) -> np.ndarray:
    """Finite-difference travel direction; holds the last direction while
    the vehicle is stationary."""
    F = len(pos)
    if F == 1:
        return np.zeros(1)
    diffs = np.empty((F, 2))
    diffs[0] = pos[1] - pos[0]
    diffs[-1] = pos[-1] - pos[-2]
    if F > 2:
        diffs[1:-1] = pos[2:] - pos[:-2]
    heading = np.arctan2(diffs[:, 1], diffs[:, 0])
    moving = np.linalg.norm(diffs, axis=-1) > 1e-6
    if not np.any(moving):
        return np.zeros(F)
    # forward-fill stationary frames, then back-fill the leading run
    last = np.where(moving, np.arange(F), -1)
    last = np.maximum.accumulate(last)
    first_valid = int(np.argmax(moving))
    last[last < 0] = first_valid
    return heading[last]


def _yaw_rates(heading: np.ndarray, dt: float) -> np.ndarray:
    F = len(heading)
    if F == 1:
        return np.zeros(1)
    h = np.unwrap(heading)
    out = np.empty(F)
    out[0] = (h[1] - h[0]) / dt
    out[-1] = (h[-1] - h[-2]) / dt
    if F > 2:
        out[1:-1] = (h[2:] - h[:-2]) / (2 * dt)
    return out


def parse_ngsim_csv(path: str, column_map: dict | None = None, units: str = "feet",
                    stats: dict | None = None) -> list[AgentTrack]:
    """Parse one trajectory CSV into per-vehicle tracks.

    column_map overrides entries of DEFAULT_COLUMNS; units is "feet"
    (NGSIM native, converted to meters) or "meters".
    """
    if units not in ("feet", "meters"):
        raise SchemaError(f"unknown units {units!r}: expected 'feet' or 'meters'")
    cols = dict(DEFAULT_COLUMNS)
    cols.update(column_map or {})
    frame = pd.read_csv(path)
    missing = [c for c in cols.values() if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}")

    k = FOOT if units == "feet" else 1.0
    counters = {"rows": len(frame), "vehicles": 0, "tracks": 0,
                "split_vehicles": 0, "dropped_short": 0}
    frame = frame.sort_values([cols["vehicle_id"], cols["frame"]], kind="mergesort")
    tracks: list[AgentTrack] = []
    for vid, group in frame.groupby(cols["vehicle_id"], sort=True):
        counters["vehicles"] += 1
        frames = group[cols["frame"]].to_numpy(dtype=np.int64)
        if np.any(np.diff(frames) <= 0):
            raise DataError(f"vehicle {vid}: duplicate or non-monotonic frames")
        splits = np.flatnonzero(np.diff(frames) != 1) + 1
        segments = np.split(np.arange(len(frames)), splits)
        if len(segments) > 1:
            counters["split_vehicles"] += 1
        for seg_idx, seg in enumerate(segments):
            if len(seg) < 2:
                counters["dropped_short"] += 1
                continue
            sub = group.iloc[seg]
            pos = np.stack([sub[cols["x"]].to_numpy(dtype=np.float64),
                            sub[cols["y"]].to_numpy(dtype=np.float64)], axis=-1) * k
            speed = sub[cols["speed"]].to_numpy(dtype=np.float64) * k
            accel = sub[cols["accel"]].to_numpy(dtype=np.float64) * k
            heading = _headings(pos)
            yaw_rate = _yaw_rates(heading, FRAME_DT)
            body = np.stack([speed, np.zeros_like(speed)], axis=-1)
            vel, _ = vdm_transform(body, heading, yaw_rate)
            acc = accel[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=-1)
            agent_id = int(vid) if len(segments) == 1 else int(vid) * 100000 + seg_idx
            track = AgentTrack(
                agent_id=agent_id,
                t=frames[seg] * FRAME_DT,
                pos=pos, vel=vel, acc=acc, heading=heading, yaw_rate=yaw_rate,
                width=sub[cols["width"]].to_numpy(dtype=np.float64) * k,
                length=sub[cols["length"]].to_numpy(dtype=np.float64) * k,
                lane=sub[cols["lane"]].to_numpy(dtype=np.int64),
            )
            track.validate()
            tracks.append(track)
            counters["tracks"] += 1
    if stats is not None:
        stats.update(counters)
    return tracks
