"""Track and scene containers.

An AgentTrack is one vehicle's time series on the 10 Hz grid. A
SceneWindow is the unit every downstream stage consumes: a host plus its
ranked neighbors over a fixed window, split into a past (observed) segment
and a future (ground truth) segment, with per-frame pairwise distance and
repulsion matrices over the whole window. Agent slot 0 is always the host;
neighbor slots are ordered by mean past distance to the host.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import DataError


@dataclass
class AgentTrack:
    agent_id: int
    t: np.ndarray        # (F,) seconds, strictly increasing, constant spacing
    pos: np.ndarray      # (F, 2) meters, global frame
    vel: np.ndarray      # (F, 2) m/s, global frame
    acc: np.ndarray      # (F, 2) m/s^2, global frame
    heading: np.ndarray  # (F,) radians
    yaw_rate: np.ndarray # (F,) rad/s
    width: np.ndarray    # (F,) meters
    length: np.ndarray   # (F,) meters
    lane: np.ndarray     # (F,) int lane ids

    def __len__(self) -> int:
        return len(self.t)

    def validate(self) -> None:
        F = len(self.t)
        for name, want in (("pos", (F, 2)), ("vel", (F, 2)), ("acc", (F, 2)),
                           ("heading", (F,)), ("yaw_rate", (F,)), ("width", (F,)),
                           ("length", (F,)), ("lane", (F,))):
            got = getattr(self, name).shape
            if got != want:
                raise DataError(f"agent {self.agent_id}: {name} shape {got}, expected {want}")
        if F >= 2:
            steps = np.diff(self.t)
            if np.any(steps <= 0):
                raise DataError(f"agent {self.agent_id}: timestamps not strictly increasing")
            if not np.allclose(steps, steps[0], rtol=0, atol=1e-9):
                raise DataError(f"agent {self.agent_id}: timestamp spacing is not constant")


@dataclass
class AgentStates:
    """Per-agent state arrays over a contiguous segment of T frames."""

    pos: np.ndarray      # (N, T, 2)
    vel: np.ndarray      # (N, T, 2)
    acc: np.ndarray      # (N, T, 2)
    heading: np.ndarray  # (N, T)
    yaw_rate: np.ndarray # (N, T)
    width: np.ndarray    # (N, T)
    length: np.ndarray   # (N, T)
    lane: np.ndarray     # (N, T)

    @property
    def n_agents(self) -> int:
        return self.pos.shape[0]

    @property
    def n_frames(self) -> int:
        return self.pos.shape[1]


def _concat_states(a: AgentStates, b: AgentStates) -> AgentStates:
    return AgentStates(**{
        f.name: np.concatenate([getattr(a, f.name), getattr(b, f.name)], axis=1)
        for f in fields(AgentStates)})


@dataclass
class SceneWindow:
    host_id: int
    agent_ids: np.ndarray   # (N,) slot 0 = host
    start_time: float       # timestamp of window frame 0
    dt: float
    past: AgentStates       # observed segment
    future: AgentStates     # ground-truth segment
    distances: np.ndarray   # (T_total, N, N) pairwise center distances
    repulsion: np.ndarray   # (T_total, N, N) repulsive interaction forces

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def history(self) -> int:
        return self.past.n_frames

    @property
    def horizon(self) -> int:
        return self.future.n_frames

    @property
    def n_frames(self) -> int:
        return self.history + self.horizon

    @property
    def current_index(self) -> int:
        """Window index of the current time (last observed frame)."""
        return self.history - 1

    def full(self) -> AgentStates:
        """Past and future concatenated to (N, T_total, ...) arrays."""
        return _concat_states(self.past, self.future)

    def validate(self) -> None:
        N = self.n_agents
        if self.past.n_agents != N or self.future.n_agents != N:
            raise DataError(f"scene host {self.host_id}: agent count mismatch")
        T = self.n_frames
        if self.distances.shape != (T, N, N) or self.repulsion.shape != (T, N, N):
            raise DataError(f"scene host {self.host_id}: pairwise matrix shapes "
                            f"{self.distances.shape}/{self.repulsion.shape}, expected {(T, N, N)}")
        if self.dt <= 0:
            raise DataError(f"scene host {self.host_id}: dt must be positive")
        for seg_name in ("past", "future"):
            seg = getattr(self, seg_name)
            for f in fields(AgentStates):
                arr = getattr(seg, f.name)
                if not np.all(np.isfinite(np.asarray(arr, dtype=np.float64))):
                    raise DataError(
                        f"scene host {self.host_id}: non-finite values in {seg_name}.{f.name}")


def scene_has_events(scene: SceneWindow, accel_threshold: float = 0.5) -> bool:
    """True if the prediction segment contains braking/steering activity or
    a lane change; used to separate interacting scenes from cruising ones."""
    mag = np.linalg.norm(scene.future.acc, axis=-1)
    if np.any(mag >= accel_threshold):
        return True
    lanes = scene.full().lane
    return bool(np.any(lanes[:, 1:] != lanes[:, :-1]))
