"""Shared test utilities.

The gradient checker here is the reference implementation for every
derivative test in the suite: central finite differences on freshly built
computations, sharing no code with the reverse-mode machinery it checks.
"""
from __future__ import annotations

import numpy as np

from trajkf.config import ModelConfig
from trajkf.data.scenes import build_scenes
from trajkf.data.types import AgentTrack, SceneWindow
from trajkf.nn import tensor as tt
from trajkf.nn.tensor import Tape

FD_EPS = 1e-5
FD_RTOL = 1e-4


def finite_difference(f, x: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central-difference gradient of scalar f at x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f(x)
        flat[i] = keep - eps
        lo = f(x)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def max_relative_error(got: np.ndarray, want: np.ndarray,
                       floor: float = 1e-6) -> float:
    """Worst elementwise |got - want| / max(|got|, |want|, floor)."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(got), np.abs(want)), floor)
    return float(np.max(np.abs(got - want) / denom))


def check_gradients(build, arrays: dict, eps: float = FD_EPS,
                    rtol: float = FD_RTOL, floor: float = 1e-6,
                    coords: int | None = None, seed: int = 0) -> float:
    """Compare reverse-mode gradients of build(tape, tensors) -> scalar
    Tensor against central differences, for every array in `arrays`.

    coords, if set, subsamples that many coordinates per array (seeded)
    instead of differencing all of them. Returns the worst relative error
    seen; asserts it is within rtol.
    """
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    tape = Tape()
    tensors = {k: tape.input(v.copy()) for k, v in arrays.items()}
    loss = build(tape, tensors)
    tt.backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, base in arrays.items():
        got = tensors[name].grad
        assert got is not None, f"no gradient flowed to input {name!r}"

        def f(x, name=name):
            probe = Tape()
            ts = {k: probe.input(x if k == name else v)
                  for k, v in arrays.items()}
            return float(build(probe, ts).data)

        if coords is None or base.size <= coords:
            want = finite_difference(f, base, eps)
            err = max_relative_error(got, want, floor)
        else:
            idx = rng.choice(base.size, size=coords, replace=False)
            err = 0.0
            for i in idx:
                flat = base.ravel().copy()
                keep = flat[i]
                flat[i] = keep + eps
                hi = f(flat.reshape(base.shape))
                flat[i] = keep - eps
                lo = f(flat.reshape(base.shape))
                want_i = (hi - lo) / (2.0 * eps)
                got_i = got.ravel()[i]
                denom = max(abs(got_i), abs(want_i), floor)
                err = max(err, abs(got_i - want_i) / denom)
        assert err <= rtol, f"gradient mismatch for {name!r}: rel err {err:.3e}"
        worst = max(worst, err)
    return worst


def tiny_cfg(n_agents: int = 3, history: int = 5, horizon: int = 6,
             **overrides) -> ModelConfig:
    """A model small enough for exhaustive finite differencing."""
    kwargs = dict(n_agents=n_agents, history=history, horizon=horizon,
                  conv_channels=(2, 3), fc_widths=(10, 8), enc_hidden=6,
                  dec_hidden=6, noise_reduce=5, noise_hidden=5)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def random_tracks(rng: np.random.Generator, n_agents: int, n_frames: int,
                  dt: float = 0.1, gap: float = 15.0) -> list[AgentTrack]:
    """Dynamically consistent single-lane tracks with smooth random
    accelerations, integrated the same way the motion stage steps."""
    tracks = []
    for a in range(n_agents):
        acc = rng.normal(0.0, 0.6, size=(n_frames, 2))
        acc[:, 1] *= 0.1
        kernel = np.ones(5) / 5.0
        acc = np.stack([np.convolve(acc[:, i], kernel, mode="same")
                        for i in range(2)], axis=-1)
        vel = np.zeros((n_frames, 2))
        pos = np.zeros((n_frames, 2))
        vel[0] = (rng.uniform(8.0, 12.0), 0.0)
        pos[0] = (a * gap, 0.0)
        for k in range(n_frames - 1):
            pos[k + 1] = pos[k] + vel[k] * dt + 0.5 * acc[k] * dt * dt
            vel[k + 1] = vel[k] + acc[k] * dt
        heading = np.arctan2(vel[:, 1], vel[:, 0])
        tracks.append(AgentTrack(
            agent_id=a, t=np.arange(n_frames) * dt, pos=pos, vel=vel, acc=acc,
            heading=heading, yaw_rate=np.zeros(n_frames),
            width=np.full(n_frames, 1.8), length=np.full(n_frames, 4.5),
            lane=np.ones(n_frames, dtype=np.int64)))
    return tracks


def random_scene(rng: np.random.Generator, n_agents: int = 3, history: int = 5,
                 horizon: int = 6, dt: float = 0.1) -> SceneWindow:
    """One scene assembled through the production windowing path."""
    n_frames = history + horizon
    tracks = random_tracks(rng, n_agents, n_frames, dt)
    scenes = build_scenes(tracks, n_neighbors=n_agents - 1, stride=n_frames,
                          history=history, horizon=horizon, hosts=[0])
    assert len(scenes) == 1
    return scenes[0]


def write_ngsim_csv(path, n_vehicles: int = 8, n_frames: int = 90,
                    seed: int = 0, lane_count: int = 2) -> None:
    """Write a trajectory CSV in the NGSIM column layout (feet units).

    Vehicles follow straight lanes with occasional braking so the file
    yields scenes with events. All kinematics are written in feet to
    exercise the unit conversion.
    """
    rng = np.random.default_rng(seed)
    foot = 0.3048
    dt = 0.1
    lines = ["Vehicle_ID,Frame_ID,Local_X,Local_Y,v_Vel,v_Acc,v_Width,v_Length,Lane_ID"]
    for vid in range(1, n_vehicles + 1):
        lane = 1 + (vid - 1) % lane_count
        x = rng.uniform(0.0, 60.0) + (vid - 1) * 22.0
        speed = rng.uniform(9.0, 13.0)
        brake_at = rng.integers(20, 50) if rng.uniform() < 0.7 else None
        for f in range(n_frames):
            accel = 0.0
            if brake_at is not None and brake_at <= f < brake_at + 15:
                accel = -2.0
            lines.append(f"{vid},{f},{x / foot:.4f},{(lane * 12.0) / foot:.4f},"
                         f"{speed / foot:.4f},{accel / foot:.4f},"
                         f"{1.8 / foot:.2f},{4.6 / foot:.2f},{lane}")
            x += speed * dt + 0.5 * accel * dt * dt
            speed = max(0.5, speed + accel * dt)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
