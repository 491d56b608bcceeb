"""Synthetic multi-lane traffic with car-following and lane changes.

Each episode simulates one corridor of vehicles for exactly one window and
yields one scene (host = a randomly chosen following vehicle). Dynamics:

  * proportional car-following: braking proportional to headway intrusion
    below follow_dist plus a closing-speed term, clamped to +-max_accel;
  * gentle relaxation toward each vehicle's own initial speed, so a
    corridor with equal speeds and large gaps produces exactly zero
    acceleration and straight tracks;
  * seeded brake events on lane leaders and bang-bang lane changes, both
    starting inside the observed segment so their continuation is
    predictable from the past.

States are integrated with the same Taylor scheme the motion layer uses
(p += v dt + a dt^2 / 2, v += a dt), so re-integrating the stored
accelerations reproduces the stored positions to rounding error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..motion import pdm_transform, vdm_transform
from .scenes import build_scenes
from .types import AgentTrack, SceneWindow


@dataclass(frozen=True)
class BehaviorConfig:
    n_vehicles: int = 6
    n_lanes: int = 2
    lane_width: float = 3.7
    speed_range: tuple = (9.0, 14.0)
    speed_jitter: float = 1.0
    gap_range: tuple = (16.0, 34.0)
    follow_dist: float = 22.0
    follow_gain: float = 0.12
    closing_gain: float = 0.35
    recovery_gain: float = 0.3
    max_accel: float = 4.0
    brake_prob: float = 0.6
    brake_decel_range: tuple = (1.5, 3.5)
    lane_change_prob: float = 0.25
    event_onset_range: tuple = (6, 16)
    brake_frames_range: tuple = (15, 30)
    lane_change_frames_range: tuple = (20, 30)
    agent_model: str = "vdm"  # "vdm" vehicles or "pdm" point agents
    history: int = 20
    horizon: int = 50
    dt: float = 0.1


def synth_scenes(n_scenes: int, seed: int, config: BehaviorConfig | None = None) -> list[SceneWindow]:
    """Generate n_scenes one-window scenes, deterministic for a given seed."""
    config = config or BehaviorConfig()
    rng = np.random.default_rng(seed)
    scenes: list[SceneWindow] = []
    episode = 0
    while len(scenes) < n_scenes:
        scenes.extend(_episode(rng, config, episode))
        episode += 1
    return scenes[:n_scenes]


def _episode(rng: np.random.Generator, cfg: BehaviorConfig, episode: int) -> list[SceneWindow]:
    n, frames, dt = cfg.n_vehicles, cfg.history + cfg.horizon, cfg.dt
    lanes0 = np.array([i % cfg.n_lanes for i in range(n)])
    base_speed = rng.uniform(*cfg.speed_range)
    v_init = base_speed + rng.uniform(-0.5, 0.5, size=n) * cfg.speed_jitter
    widths = rng.uniform(1.8, 2.1, size=n)
    lengths = rng.uniform(4.2, 5.0, size=n)

    # stagger x within each lane, front vehicle first
    x0 = np.zeros(n)
    for lane in range(cfg.n_lanes):
        members = np.flatnonzero(lanes0 == lane)
        x = rng.uniform(180.0, 220.0)
        for m in members:
            x0[m] = x
            x -= rng.uniform(*cfg.gap_range)

    # seeded events
    brakes = {}  # vehicle -> (onset, end, decel)
    if rng.uniform() < cfg.brake_prob:
        lane = int(rng.integers(cfg.n_lanes))
        members = np.flatnonzero(lanes0 == lane)
        leader = members[np.argmax(x0[members])]
        onset = int(rng.integers(cfg.event_onset_range[0], cfg.event_onset_range[1] + 1))
        dur = int(rng.integers(cfg.brake_frames_range[0], cfg.brake_frames_range[1] + 1))
        brakes[leader] = (onset, onset + dur, rng.uniform(*cfg.brake_decel_range))
    changes = {}  # vehicle -> (onset, end, a_lat)
    if rng.uniform() < cfg.lane_change_prob:
        cand = int(rng.integers(n))
        if cand not in brakes:
            onset = int(rng.integers(cfg.event_onset_range[0], cfg.event_onset_range[1] + 1))
            dur = int(rng.integers(cfg.lane_change_frames_range[0],
                                   cfg.lane_change_frames_range[1] + 1)) // 2 * 2
            direction = 1 if lanes0[cand] + 1 < cfg.n_lanes else -1
            dy = direction * cfg.lane_width
            changes[cand] = (onset, onset + dur, 4.0 * dy / (dur * dt) ** 2)

    pos = np.zeros((frames, n, 2))
    vel = np.zeros((frames, n, 2))
    acc = np.zeros((frames, n, 2))
    pos[0, :, 0] = x0
    pos[0, :, 1] = lanes0 * cfg.lane_width
    vel[0, :, 0] = v_init

    lane_of = lambda y: np.clip(np.round(y / cfg.lane_width), 0, cfg.n_lanes - 1).astype(int)
    for k in range(frames):
        lanes_k = lane_of(pos[k, :, 1])
        for i in range(n):
            ax = cfg.recovery_gain * (v_init[i] - vel[k, i, 0])
            ahead = [j for j in range(n)
                     if j != i and lanes_k[j] == lanes_k[i] and pos[k, j, 0] > pos[k, i, 0]]
            if ahead:
                j = min(ahead, key=lambda j: pos[k, j, 0])
                gap = pos[k, j, 0] - pos[k, i, 0] - lengths[j]
                if gap < cfg.follow_dist:
                    ax += cfg.follow_gain * (gap - cfg.follow_dist)
                    ax += cfg.closing_gain * min(vel[k, j, 0] - vel[k, i, 0], 0.0)
            if i in brakes and brakes[i][0] <= k < brakes[i][1]:
                ax = -brakes[i][2]
            ax = float(np.clip(ax, -cfg.max_accel, cfg.max_accel))
            # never integrate through zero speed
            if vel[k, i, 0] + ax * dt < 0.0:
                ax = -vel[k, i, 0] / dt
            ay = 0.0
            if i in changes:
                onset, end, a_lat = changes[i]
                if onset <= k < end:
                    ay = a_lat if k < (onset + end) // 2 else -a_lat
            acc[k, i] = (ax, ay)
        if k + 1 < frames:
            pos[k + 1] = pos[k] + vel[k] * dt + 0.5 * acc[k] * dt * dt
            vel[k + 1] = vel[k] + acc[k] * dt

    tracks = []
    t = np.arange(frames) * dt
    for i in range(n):
        heading = np.arctan2(vel[:, i, 1], np.maximum(vel[:, i, 0], 1e-9))
        yaw_rate = np.gradient(np.unwrap(heading), dt)
        speed = np.linalg.norm(vel[:, i], axis=-1)
        if cfg.agent_model == "vdm":
            body = np.stack([speed, np.zeros(frames)], axis=-1)
            v_global, _ = vdm_transform(body, heading)
        else:
            v_global, _ = pdm_transform(vel[:, i])
        tracks.append(AgentTrack(
            agent_id=episode * 100 + i, t=t.copy(), pos=pos[:, i].copy(),
            vel=v_global, acc=acc[:, i].copy(), heading=heading, yaw_rate=yaw_rate,
            width=np.full(frames, widths[i]), length=np.full(frames, lengths[i]),
            lane=lane_of(pos[:, i, 1])))

    # host: a vehicle with someone ahead in its lane at the current time
    cur = cfg.history - 1
    lanes_cur = lane_of(pos[cur, :, 1])
    followers = [i for i in range(n)
                 if any(lanes_cur[j] == lanes_cur[i] and pos[cur, j, 0] > pos[cur, i, 0]
                        for j in range(n) if j != i)]
    host_local = int(rng.choice(followers)) if followers else int(rng.integers(n))
    return build_scenes(tracks, n_neighbors=n - 1, stride=frames,
                        history=cfg.history, horizon=cfg.horizon,
                        hosts=[episode * 100 + host_local])
