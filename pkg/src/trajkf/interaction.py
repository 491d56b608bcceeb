"""Interaction layer: social features -> future acceleration forecast.

Features per observed timestep: per-agent channels (acceleration x/y,
width, length) and pairwise channels (center distance, repulsion). The
pairwise N x N maps pass through two small conv layers, are flattened,
joined with the per-agent channels, and mixed by two dense layers; an LSTM
encodes the timestep sequence. A second LSTM decodes the forecast horizon,
each step consuming the previous step's output acceleration (or, with
teacher forcing, the ground-truth acceleration), and a dense head emits
per-agent accelerations clamped to +-a_max via a_max * tanh.

Output slot order follows the scene's slot order (host first, neighbors by
distance rank); the network is not permutation-equivariant, the ranking is
what fixes slot semantics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .data.types import SceneWindow
from .errors import ConfigError, DataError
from .nn import tensor as tt
from .nn.layers import (ParamSpec, conv2d_forward, conv_specs, dense_specs,
                        fc_forward, lstm_specs, lstm_step, lstm_zero_state)
from .nn.params import ParamStore
from .nn.tensor import Tape, Tensor

N_AGENT_CHANNELS = 4  # accel x, accel y, width, length
N_PAIR_CHANNELS = 2   # distance, repulsion


@dataclass
class InteractionFeatures:
    """Standardizable inputs for one observation window.

    agent: (T, N, 4); pairwise: (T, N, N, 2), channels last.
    """

    agent: np.ndarray
    pairwise: np.ndarray


@dataclass
class FeatureScaler:
    """Per-channel standardization statistics fitted on a training set."""

    agent_mean: np.ndarray   # (4,)
    agent_std: np.ndarray    # (4,)
    pair_mean: np.ndarray    # (2,)
    pair_std: np.ndarray     # (2,)

    def to_dict(self) -> dict:
        return {"agent_mean": self.agent_mean.tolist(), "agent_std": self.agent_std.tolist(),
                "pair_mean": self.pair_mean.tolist(), "pair_std": self.pair_std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in
                     ("agent_mean", "agent_std", "pair_mean", "pair_std")))


def build_features(scene: SceneWindow, end: int | None = None, history: int | None = None,
                   scaler: FeatureScaler | None = None) -> InteractionFeatures:
    """Assemble (and optionally standardize) the feature window ending at
    window frame `end` (default: the scene's current time)."""
    history = history if history is not None else scene.history
    end = end if end is not None else scene.current_index
    start = end - history + 1
    if start < 0 or end >= scene.n_frames:
        raise DataError(f"feature window [{start}, {end}] outside scene frames")
    states = scene.full()
    agent = np.concatenate([
        states.acc[:, start:end + 1].transpose(1, 0, 2),
        states.width[:, start:end + 1].T[:, :, None],
        states.length[:, start:end + 1].T[:, :, None],
    ], axis=-1)
    pairwise = np.stack([scene.distances[start:end + 1], scene.repulsion[start:end + 1]],
                        axis=-1)
    if not (np.all(np.isfinite(agent)) and np.all(np.isfinite(pairwise))):
        raise DataError(f"scene host {scene.host_id}: non-finite feature values")
    if scaler is not None:
        agent = (agent - scaler.agent_mean) / scaler.agent_std
        pairwise = (pairwise - scaler.pair_mean) / scaler.pair_std
    return InteractionFeatures(agent=agent, pairwise=pairwise)


def fit_scaler(scenes: list[SceneWindow]) -> FeatureScaler:
    """Channel-wise mean/std over the raw past-window features of a
    training set. Constant channels keep std 1 to stay finite."""
    agents, pairs = [], []
    for scene in scenes:
        f = build_features(scene)
        agents.append(f.agent.reshape(-1, N_AGENT_CHANNELS))
        pairs.append(f.pairwise.reshape(-1, N_PAIR_CHANNELS))
    agent = np.concatenate(agents)
    pair = np.concatenate(pairs)

    def _std(x):
        s = x.std(axis=0)
        return np.where(s < 1e-12, 1.0, s)

    return FeatureScaler(agent_mean=agent.mean(axis=0), agent_std=_std(agent),
                         pair_mean=pair.mean(axis=0), pair_std=_std(pair))


# ---------------------------------------------------------------------------
# network


def interaction_specs(cfg: ModelConfig) -> list[ParamSpec]:
    N = cfg.n_agents
    c1, c2 = cfg.conv_channels
    f1, f2 = cfg.fc_widths
    mix_in = c2 * N * N + N_AGENT_CHANNELS * N
    specs = []
    specs += conv_specs("inter.conv1", 3, 3, N_PAIR_CHANNELS, c1)
    specs += conv_specs("inter.conv2", 3, 3, c1, c2)
    specs += dense_specs("inter.fc1", mix_in, f1)
    specs += dense_specs("inter.fc2", f1, f2)
    specs += lstm_specs("inter.enc", f2, cfg.enc_hidden)
    specs += lstm_specs("inter.dec", 2 * N, cfg.dec_hidden)
    specs += dense_specs("inter.head", cfg.dec_hidden, 2 * N)
    return specs


def interaction_forward(tape: Tape, params: ParamStore, cfg: ModelConfig,
                        features: InteractionFeatures, start_accel: np.ndarray,
                        teacher_accel: np.ndarray | None = None,
                        teacher_mask: np.ndarray | None = None) -> Tensor:
    """Forecast (L, N, 2) accelerations from one feature window.

    start_accel (N, 2): last observed accelerations, first decoder input.
    teacher_accel (L, N, 2) with boolean teacher_mask (L,): decoder steps
    flagged in the mask consume the ground-truth acceleration instead of
    the previous output (training-time teacher forcing).
    """
    T, N, _ = features.agent.shape
    if N != cfg.n_agents:
        raise ConfigError(f"features have {N} agents, model expects {cfg.n_agents}")
    if features.pairwise.shape != (T, N, N, N_PAIR_CHANNELS):
        raise ConfigError(f"bad pairwise feature shape {features.pairwise.shape}")

    # pairwise maps through the conv stack, all timesteps as one batch
    x = tape.input(features.pairwise)
    x = conv2d_forward(tape, params, "inter.conv1", x, stride=1, padding=1)
    x = conv2d_forward(tape, params, "inter.conv2", x, stride=1, padding=1)
    x = tt.reshape(x, (T, -1))
    mixed = tt.concat([x, tape.input(features.agent.reshape(T, -1))], axis=-1)
    mixed = fc_forward(tape, params, "inter.fc1", mixed)
    mixed = fc_forward(tape, params, "inter.fc2", mixed)

    enc = lstm_zero_state(tape, cfg.enc_hidden)
    for k in range(T):
        enc = lstm_step(tape, params, "inter.enc", tt.take(mixed, k, axis=0), enc)

    if cfg.dec_hidden != cfg.enc_hidden:
        raise ConfigError("decoder hidden width must match encoder hidden width")
    dec = enc
    prev = tape.input(np.asarray(start_accel, dtype=np.float64).reshape(2 * N))
    outputs = []
    for k in range(cfg.horizon):
        if teacher_mask is not None and k > 0 and teacher_mask[k - 1]:
            prev = tape.input(teacher_accel[k - 1].reshape(2 * N))
        dec = lstm_step(tape, params, "inter.dec", prev, dec)
        raw = fc_forward(tape, params, "inter.head", dec.h, activation="identity")
        out = tt.scale(tt.tanh(raw), cfg.a_max)
        outputs.append(out)
        prev = out
    return tt.reshape(tt.stack(outputs, axis=0), (cfg.horizon, N, 2))
