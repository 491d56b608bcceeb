"""Scene-level forward pass, loss, and the training loop.

Per scene and observation timestamp t0+j: build the feature window ending
at t0+j, forecast accelerations with the interaction net, integrate them
into a trajectory observation with the motion layer (in scene-local
coordinates anchored at the host's current position), and fuse everything
with the filter. The loss compares each posterior stacked state against
the matching ground-truth window,

    loss = 1 / ((L'+1) * N) * sum_t sum_i ||S_hat_t^i - G_t^i||^2,

summing squared position and velocity entries over both axes (positions
only with the config flag). Ground-truth windows that run past the scene
edge contribute zero for the missing steps; the normalization is
unchanged.
"""
from __future__ import annotations

import numpy as np

from .config import ModelConfig, TrainConfig
from .data.types import SceneWindow
from .errors import ConfigError, TrainError
from .filtering import FilterRun, filter_sequence, noise_specs
from .interaction import (FeatureScaler, build_features, fit_scaler,
                          interaction_forward, interaction_specs)
from .motion import rollout
from .nn import tensor as tt
from .nn.optim import adam_step, clip_global_norm
from .nn.params import ParamStore, init_params
from .nn.tensor import Tape, Tensor


def model_specs(cfg: ModelConfig):
    return interaction_specs(cfg) + noise_specs(cfg)


def init_model(cfg: ModelConfig, seed: int) -> ParamStore:
    return init_params(model_specs(cfg), seed)


def scene_forward(scene: SceneWindow, cfg: ModelConfig, params: ParamStore,
                  scaler: FeatureScaler, tape: Tape, filter_steps: int = 1,
                  teacher_forcing: float = 0.0, rng: np.random.Generator | None = None,
                  fixed_noise: tuple | None = None) -> FilterRun:
    """Run the full pipeline on one scene for filter_steps timestamps."""
    if filter_steps < 1 or filter_steps > scene.horizon + 1:
        raise ConfigError(f"filter_steps must be in [1, {scene.horizon + 1}]")
    states = scene.full()
    cur = scene.current_index
    anchor = scene.past.pos[0, cur].copy()
    accel_forecasts = []
    traj_forecasts = []
    for j in range(filter_steps):
        end = cur + j
        features = build_features(scene, end=end, history=cfg.history, scaler=scaler)
        start_accel = states.acc[:, end]
        teacher_accel = teacher_mask = None
        if teacher_forcing > 0.0:
            if rng is None:
                raise ConfigError("teacher forcing needs an rng")
            mask = rng.uniform(size=cfg.horizon) < teacher_forcing
            if np.any(mask):
                teacher_mask = mask
                pad = max(0, end + cfg.horizon - scene.n_frames)
                avail = states.acc[:, end:end + cfg.horizon]
                if pad:
                    avail = np.concatenate(
                        [avail, np.repeat(avail[:, -1:], pad, axis=1)], axis=1)
                teacher_accel = avail.transpose(1, 0, 2)
        accel = interaction_forward(tape, params, cfg, features, start_accel,
                                    teacher_accel=teacher_accel, teacher_mask=teacher_mask)
        p0 = states.pos[:, end] - anchor
        v0 = states.vel[:, end]
        traj_forecasts.append(rollout(p0, v0, accel, scene.dt))
        accel_forecasts.append(accel)
    return filter_sequence(scene, cfg, params, tape, accel_forecasts, traj_forecasts,
                           fixed_noise=fixed_noise, anchor=anchor)


def stacked_targets(scene: SceneWindow, cfg: ModelConfig, filter_steps: int,
                    anchor: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth blocked states and validity masks per timestamp.

    Returns targets (steps, 2, NL, 2) and mask (steps, 1, NL, 1); mask is
    zero where the truth window runs past the scene edge.
    """
    N, L = cfg.n_agents, cfg.horizon
    targets = np.zeros((filter_steps, 2, N * L, 2))
    mask = np.zeros((filter_steps, 1, N * L, 1))
    fpos = scene.future.pos - anchor  # (N, horizon, 2)
    fvel = scene.future.vel
    for j in range(filter_steps):
        n_valid = min(L, scene.horizon - j)
        if n_valid <= 0:
            continue
        sl = slice(j, j + n_valid)
        block = np.stack([fpos[:, sl], fvel[:, sl]], axis=-1)  # (N, n_valid, ax, pv)
        block = block.transpose(2, 0, 1, 3)                    # (ax, N, n_valid, pv)
        idx = (np.arange(N)[:, None] * L + np.arange(n_valid)[None, :]).ravel()
        targets[j, :, idx, :] = block.reshape(2, -1, 2).transpose(1, 0, 2)
        mask[j, 0, idx, 0] = 1.0
    return targets, mask


def sequence_loss(run: FilterRun, scene: SceneWindow, cfg: ModelConfig,
                  positions_only: bool = False) -> Tensor:
    """Training loss over the run's posterior estimates."""
    steps = len(run.steps)
    targets, mask = stacked_targets(scene, cfg, steps, run.anchor)
    sel = np.array([1.0, 0.0]) if positions_only else np.array([1.0, 1.0])
    total = None
    for j, step in enumerate(run.steps):
        diff = tt.sub(step.post_mean, targets[j])
        masked = tt.mul(diff, mask[j] * sel)
        term = tt.sum_all(tt.square(masked))
        total = term if total is None else tt.add(total, term)
    return tt.scale(total, 1.0 / (steps * cfg.n_agents))


def split_scenes(scenes: list[SceneWindow], fractions=(0.7, 0.15, 0.15),
                 seed: int = 0) -> tuple[list, list, list]:
    """Host-disjoint train/val/test split: every scene of one host lands in
    the same bucket."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("fractions must be three values summing to 1")
    hosts = sorted({s.host_id for s in scenes})
    rng = np.random.default_rng(seed)
    rng.shuffle(hosts)
    by_host = {h: [] for h in hosts}
    for s in scenes:
        by_host[s.host_id].append(s)
    buckets: tuple[list, list, list] = ([], [], [])
    counts = np.zeros(3)
    want = np.asarray(fractions, dtype=np.float64)
    total = 0
    for h in hosts:
        group = by_host[h]
        total += len(group)
        deficit = want * total - counts
        b = int(np.argmax(deficit))
        buckets[b].extend(group)
        counts[b] += len(group)
    return buckets


def train(scenes: list[SceneWindow], cfg: ModelConfig, tcfg: TrainConfig,
          scaler: FeatureScaler | None = None,
          callback=None) -> tuple[ParamStore, FeatureScaler, list[float]]:
    """Train on the given scenes; returns (params, scaler, loss curve).

    Deterministic for a given seed: init, epoch shuffling, and teacher
    forcing all draw from one seeded generator. callback(epoch, batch) is
    invoked after every optimizer step.
    """
    if not scenes:
        raise ConfigError("no scenes to train on")
    if scaler is None:
        scaler = fit_scaler(scenes)
    params = init_model(cfg, tcfg.seed)
    rng = np.random.default_rng(tcfg.seed + 1)
    curve: list[float] = []
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(scenes))
        epoch_losses = []
        for b0 in range(0, len(order), tcfg.batch_size):
            batch = order[b0:b0 + tcfg.batch_size]
            for idx in batch:
                scene = scenes[idx]
                tape = Tape()
                run = scene_forward(scene, cfg, params, scaler, tape,
                                    filter_steps=tcfg.filter_steps,
                                    teacher_forcing=tcfg.teacher_forcing, rng=rng)
                loss = sequence_loss(run, scene, cfg, tcfg.positions_only)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainError(f"epoch {epoch}, scene host {scene.host_id}: "
                                     f"non-finite loss")
                epoch_losses.append(value)
                tt.backward(loss)
                params.harvest(tape, scale=1.0 / len(batch))
            clip_global_norm(params, tcfg.max_grad_norm)
            adam_step(params, lr=tcfg.lr, beta1=tcfg.beta1, beta2=tcfg.beta2,
                      eps=tcfg.eps)
            if callback is not None:
                callback(epoch, b0 // tcfg.batch_size)
        curve.append(float(np.mean(epoch_losses)))
    return params, scaler, curve


def predict_scene(scene: SceneWindow, cfg: ModelConfig, params: ParamStore,
                  scaler: FeatureScaler, filter_steps: int = 1,
                  bypass_filter: bool = False) -> dict:
    """Inference on one scene. Returns global-frame positions (L, N, 2),
    velocities, and per-axis position variances (None when the filter is
    bypassed and no covariance exists)."""
    tape = Tape()
    if bypass_filter:
        states = scene.full()
        cur = scene.current_index
        features = build_features(scene, end=cur, history=cfg.history, scaler=scaler)
        accel = interaction_forward(tape, params, cfg, features, states.acc[:, cur])
        traj = rollout(states.pos[:, cur], states.vel[:, cur], accel, scene.dt)
        return {"positions": traj.positions.data.copy(),
                "velocities": traj.velocities.data.copy(),
                "position_variances": None}
    run = scene_forward(scene, cfg, params, scaler, tape, filter_steps=filter_steps)
    return {"positions": run.predicted_positions(0),
            "velocities": run.predicted_velocities(0),
            "position_variances": run.position_variances(0)}
