"""Kinematic motion layer: velocity resolution and Taylor rollout.

Sensor readings live in the vehicle body frame; vdm_transform rotates them
into the global frame (lateral/longitudinal velocity plus heading), while
pdm_transform is the identity used for agents whose readings are already
global (e.g. pedestrian datasets).

The rollout integrates accelerations into future positions with

    v_{t+i} = v_t + dt * sum_{k<=i} a_{t+k-1}
    p_{t+i} = p_{t+i-1} + v_{t+i-1} * dt + 0.5 * a_{t+i-1} * dt^2

which is exact for piecewise-constant acceleration. It accepts either a
plain ndarray (data paths) or a Tensor (training paths, differentiable).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import tensor as tt
from .nn.tensor import Tensor


def vdm_transform(v_body, heading, yaw_rate=0.0):
    """Body-frame velocity -> global frame.

    v_body: (..., 2) lateral/longitudinal (v_x forward, v_y left);
    heading: (...,) radians. Returns (v_global (..., 2), heading_rate).
    """
    v_body = np.asarray(v_body, dtype=np.float64)
    heading = np.asarray(heading, dtype=np.float64)
    c, s = np.cos(heading), np.sin(heading)
    vx = v_body[..., 0] * c - v_body[..., 1] * s
    vy = v_body[..., 0] * s + v_body[..., 1] * c
    return np.stack([vx, vy], axis=-1), np.asarray(yaw_rate, dtype=np.float64)


def pdm_transform(v, heading=None, yaw_rate=0.0):
    """Point-mass model: readings are already global; pass through."""
    return np.asarray(v, dtype=np.float64), np.asarray(yaw_rate, dtype=np.float64)


@dataclass
class TrajectoryForecast:
    """L-step future positions and velocities, (L, N, 2) each.

    Arrays are ndarrays on data paths and Tensors on training paths.
    """

    positions: object
    velocities: object
    dt: float


def integrate_velocities(v0, accel, dt: float):
    """v_{t+i} for i = 1..L from the start velocity and acceleration forecast.

    v0: (N, 2); accel: (L, N, 2); returns (L, N, 2).
    """
    if isinstance(accel, Tensor):
        return tt.add(tt.scale(tt.cumsum(accel, axis=0), dt), np.asarray(v0, dtype=np.float64))
    accel = np.asarray(accel, dtype=np.float64)
    return np.asarray(v0, dtype=np.float64) + dt * np.cumsum(accel, axis=0)


def rollout(p0, v0, accel, dt: float) -> TrajectoryForecast:
    """Integrate an acceleration forecast into a trajectory forecast.

    p0, v0: (N, 2) state at the current time; accel: (L, N, 2) forecast for
    the next L steps. Closed form of the recurrence above:

        p_{t+i} = p0 + i*dt*v0 + dt^2 * (cumsum(c)_i - 0.5 * c_i),
        c = cumsum(a)

    which matches the step-by-step loop to rounding error.
    """
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    p0 = np.asarray(p0, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    if isinstance(accel, Tensor):
        L = accel.data.shape[0]
        steps = np.arange(1, L + 1, dtype=np.float64)[:, None, None]
        c = tt.cumsum(accel, axis=0)
        inner = tt.sub(tt.cumsum(c, axis=0), tt.scale(c, 0.5))
        pos = tt.add(tt.scale(inner, dt * dt), p0 + steps * dt * v0)
        vel = tt.add(tt.scale(c, dt), v0)
        return TrajectoryForecast(positions=pos, velocities=vel, dt=dt)
    accel = np.asarray(accel, dtype=np.float64)
    L = accel.shape[0]
    steps = np.arange(1, L + 1, dtype=np.float64)[:, None, None]
    c = np.cumsum(accel, axis=0)
    pos = p0 + steps * dt * v0 + dt * dt * (np.cumsum(c, axis=0) - 0.5 * c)
    vel = v0 + dt * c
    return TrajectoryForecast(positions=pos, velocities=vel, dt=dt)
