"""Scene construction from tracks, plus NDJSON serialization.

Windowing protocol: a window is history + horizon frames (default 20 + 50
at 10 Hz, i.e. 2 s observed / 5 s ground truth). For each host and each
stride-aligned start where the host is fully present, neighbors are the
tracks fully present over the window whose lane at the current time is
within one lane of the host's; the closest n_neighbors by mean distance
over the past segment are kept, host first. Windows with too few eligible
neighbors are skipped and counted.
"""
from __future__ import annotations

import json
from dataclasses import fields

import numpy as np

from .._util import atomic_write_text
from ..errors import DataError
from .types import AgentStates, AgentTrack, SceneWindow

SCENE_FORMAT_VERSION = 1


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    """Euclidean center distances; positions (N, 2) -> (N, N)."""
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def repulsive_forces(positions: np.ndarray, velocities: np.ndarray, dt: float) -> np.ndarray:
    """Pairwise repulsion e_ij = exp((|v_i| + |v_j|) * dt - d_ij), zero diagonal."""
    positions = np.asarray(positions, dtype=np.float64)
    velocities = np.asarray(velocities, dtype=np.float64)
    speeds = np.linalg.norm(velocities, axis=-1)
    d = pairwise_distances(positions)
    e = np.exp((speeds[:, None] + speeds[None, :]) * dt - d)
    np.fill_diagonal(e, 0.0)
    return e


def _frame_index(track: AgentTrack, dt: float) -> int:
    """Integer index of the track's first frame on the shared dt grid."""
    return int(round(track.t[0] / dt))


def build_scenes(tracks: list[AgentTrack], n_neighbors: int = 5, stride: int = 10,
                 history: int = 20, horizon: int = 50, lane_tolerance: int = 1,
                 hosts: list[int] | None = None,
                 stats: dict | None = None) -> list[SceneWindow]:
    """Slide windows over every host track and assemble SceneWindows.

    hosts restricts which agent ids may take the host slot (all by default).
    stats, if given, is filled with window/skip counters.
    """
    if not tracks:
        return []
    window = history + horizon
    dt = float(tracks[0].t[1] - tracks[0].t[0]) if len(tracks[0]) >= 2 else 0.1
    for tr in tracks:
        tr.validate()
        if len(tr) >= 2 and not np.isclose(tr.t[1] - tr.t[0], dt, rtol=0, atol=1e-9):
            raise DataError(f"agent {tr.agent_id}: frame spacing differs from the shared grid")

    by_id = {tr.agent_id: tr for tr in tracks}
    if len(by_id) != len(tracks):
        raise DataError("duplicate agent ids across tracks")
    ids = np.array(sorted(by_id))
    first = np.array([_frame_index(by_id[i], dt) for i in ids])
    last = first + np.array([len(by_id[i]) for i in ids]) - 1

    counters = {"windows_considered": 0, "skipped_few_neighbors": 0, "scenes_built": 0}
    host_ids = sorted(by_id) if hosts is None else [h for h in sorted(by_id) if h in set(hosts)]

    scenes: list[SceneWindow] = []
    for host_id in host_ids:
        host = by_id[host_id]
        h_first = _frame_index(host, dt)
        for s in range(h_first, h_first + len(host) - window + 1, stride):
            counters["windows_considered"] += 1
            cur = s + history - 1
            host_lane = int(host.lane[cur - h_first])
            covered = (first <= s) & (last >= s + window - 1) & (ids != host_id)
            cands = []
            host_past_pos = host.pos[s - h_first:cur - h_first + 1]
            for cid in ids[covered]:
                cand = by_id[cid]
                off = s - _frame_index(cand, dt)
                if abs(int(cand.lane[off + history - 1]) - host_lane) > lane_tolerance:
                    continue
                cand_past_pos = cand.pos[off:off + history]
                mean_d = float(np.mean(np.linalg.norm(cand_past_pos - host_past_pos, axis=-1)))
                cands.append((mean_d, int(cid)))
            if len(cands) < n_neighbors:
                counters["skipped_few_neighbors"] += 1
                continue
            cands.sort()
            chosen = [host_id] + [cid for _, cid in cands[:n_neighbors]]
            scenes.append(_assemble(by_id, chosen, s, history, horizon, dt))
            counters["scenes_built"] += 1
    if stats is not None:
        stats.update(counters)
    return scenes


def _assemble(by_id: dict, chosen: list[int], start: int, history: int,
              horizon: int, dt: float) -> SceneWindow:
    window = history + horizon
    N = len(chosen)
    arrs = {f.name: [] for f in fields(AgentStates)}
    for cid in chosen:
        tr = by_id[cid]
        off = start - _frame_index(tr, dt)
        for name in arrs:
            arrs[name].append(getattr(tr, name)[off:off + window])
    full = {name: np.stack(vals) for name, vals in arrs.items()}
    distances = np.empty((window, N, N))
    repulsion = np.empty((window, N, N))
    for k in range(window):
        distances[k] = pairwise_distances(full["pos"][:, k])
        repulsion[k] = repulsive_forces(full["pos"][:, k], full["vel"][:, k], dt)
    past = AgentStates(**{n: v[:, :history] for n, v in full.items()})
    future = AgentStates(**{n: v[:, history:] for n, v in full.items()})
    return SceneWindow(host_id=chosen[0], agent_ids=np.array(chosen),
                       start_time=float(by_id[chosen[0]].t[start - _frame_index(by_id[chosen[0]], dt)]),
                       dt=dt, past=past, future=future,
                       distances=distances, repulsion=repulsion)


# ---------------------------------------------------------------------------
# NDJSON serialization (one scene per line, deterministic field order)


def _states_to_record(states: AgentStates) -> dict:
    rec = {}
    for f in fields(AgentStates):
        arr = getattr(states, f.name)
        rec[f.name] = arr.astype(int).tolist() if f.name == "lane" else arr.tolist()
    return rec


def _states_from_record(rec: dict) -> AgentStates:
    kwargs = {}
    for f in fields(AgentStates):
        dtype = np.int64 if f.name == "lane" else np.float64
        kwargs[f.name] = np.asarray(rec[f.name], dtype=dtype)
    return AgentStates(**kwargs)


def scene_to_record(scene: SceneWindow) -> dict:
    return {
        "format_version": SCENE_FORMAT_VERSION,
        "host_id": int(scene.host_id),
        "agent_ids": [int(i) for i in scene.agent_ids],
        "start_time": float(scene.start_time),
        "dt": float(scene.dt),
        "past": _states_to_record(scene.past),
        "future": _states_to_record(scene.future),
        "distances": scene.distances.tolist(),
        "repulsion": scene.repulsion.tolist(),
    }


def scene_from_record(rec: dict) -> SceneWindow:
    version = rec.get("format_version")
    if version != SCENE_FORMAT_VERSION:
        raise DataError(f"scene record format_version {version} not supported "
                        f"(expected {SCENE_FORMAT_VERSION})")
    scene = SceneWindow(
        host_id=int(rec["host_id"]),
        agent_ids=np.asarray(rec["agent_ids"], dtype=np.int64),
        start_time=float(rec["start_time"]),
        dt=float(rec["dt"]),
        past=_states_from_record(rec["past"]),
        future=_states_from_record(rec["future"]),
        distances=np.asarray(rec["distances"], dtype=np.float64),
        repulsion=np.asarray(rec["repulsion"], dtype=np.float64),
    )
    scene.validate()
    return scene


def save_scenes(path: str, scenes: list[SceneWindow]) -> None:
    lines = [json.dumps(scene_to_record(s), separators=(",", ":")) for s in scenes]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_scenes(path: str) -> list[SceneWindow]:
    scenes = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            scenes.append(scene_from_record(rec))
    return scenes
