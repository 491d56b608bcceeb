"""Multi-agent Kalman filtering with learned time-varying noise.

State layout: per coordinate axis, the stacked state holds every agent's
L-step future as interleaved (position, velocity) pairs,

    index(agent a, step k, p/v) = a * 2L + 2k + {0, 1},

so the dense vector reshapes losslessly to (N*L, 2) blocks. The transition
F = kron(I_N, M1) with per-step blocks M1_k = [[1, dt], [0, 1]] and the
control map B = kron(I_N, M2) with columns (dt^2/2, dt) propagate every
pair one dt forward, which is exactly the one-step shift of the forecast
window. With H = I and diagonal Q, R the dense covariance recursion never
couples distinct (agent, step) pairs, so the trainable path runs batched
2x2 blocks; the dense textbook recursion is kept as an independent
reference path and the two agree to rounding error.

Per filter timestamp t the diagonal process/observation noises come from
two LSTMs: Q_t from the running history of predicted states, R_t from the
history of motion-layer observations, each through softplus plus a
variance floor. Axes share noise-net parameters but keep separate LSTM
states; all histories reset at scene start.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .data.types import SceneWindow
from .errors import ConfigError, NumericError
from .motion import TrajectoryForecast, rollout
from .nn import tensor as tt
from .nn.layers import (ParamSpec, dense_specs, fc_forward, lstm_specs,
                        lstm_step, lstm_zero_state)
from .nn.params import ParamStore
from .nn.tensor import Tape, Tensor


# ---------------------------------------------------------------------------
# stacked-state layout helpers


def stack_trajectory(pos, vel):
    """(L, N, 2) positions/velocities -> blocked (2, N*L, 2) per-axis state."""
    if isinstance(pos, Tensor) or isinstance(vel, Tensor):
        L, N, _ = tt._data(pos).shape
        arr = tt.stack([pos, vel], axis=-1)          # (L, N, axis, pv)
        arr = tt.permute(arr, (2, 1, 0, 3))          # (axis, N, L, pv)
        return tt.reshape(arr, (2, N * L, 2))
    pos = np.asarray(pos, dtype=np.float64)
    vel = np.asarray(vel, dtype=np.float64)
    L, N, _ = pos.shape
    arr = np.stack([pos, vel], axis=-1).transpose(2, 1, 0, 3)
    return arr.reshape(2, N * L, 2)


def unstack_mean(blocked: np.ndarray, n_agents: int) -> tuple[np.ndarray, np.ndarray]:
    """Blocked (2, N*L, 2) -> positions and velocities, (L, N, 2) each."""
    two, NL, _ = blocked.shape
    L = NL // n_agents
    arr = blocked.reshape(2, n_agents, L, 2).transpose(2, 1, 0, 3)
    return arr[..., 0], arr[..., 1]


def stack_controls(accel):
    """(L, N, 2) accelerations -> (2, N*L) per-axis control vector."""
    if isinstance(accel, Tensor):
        L, N, _ = accel.data.shape
        return tt.reshape(tt.permute(accel, (2, 1, 0)), (2, N * L))
    accel = np.asarray(accel, dtype=np.float64)
    L, N, _ = accel.shape
    return accel.transpose(2, 1, 0).reshape(2, N * L)


def blocked_to_dense_cov(blocks: np.ndarray) -> np.ndarray:
    """(NL, 2, 2) covariance blocks -> dense (2NL, 2NL) block-diagonal."""
    NL = blocks.shape[0]
    dense = np.zeros((2 * NL, 2 * NL))
    for r in range(NL):
        dense[2 * r:2 * r + 2, 2 * r:2 * r + 2] = blocks[r]
    return dense


# ---------------------------------------------------------------------------
# transition structure


def build_F_B(n_agents: int, horizon: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Dense transition and control matrices, (2NL, 2NL) and (2NL, NL)."""
    if n_agents < 1 or horizon < 1:
        raise ConfigError("build_F_B needs n_agents >= 1 and horizon >= 1")
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    m1_block = np.array([[1.0, dt], [0.0, 1.0]])
    m2_block = np.array([[0.5 * dt * dt], [dt]])
    M1 = np.kron(np.eye(horizon), m1_block)
    M2 = np.kron(np.eye(horizon), m2_block)
    F = np.kron(np.eye(n_agents), M1)
    B = np.kron(np.eye(n_agents), M2)
    return F, B


# ---------------------------------------------------------------------------
# generic textbook filter (reference path, arbitrary F, B, H)


def kf_predict(s, P, F, Q, B=None, u=None):
    s_prior = F @ s if B is None or u is None else F @ s + B @ u
    P_prior = F @ P @ F.T + Q
    return s_prior, 0.5 * (P_prior + P_prior.T)


def kf_update(s_prior, P_prior, z, H, R):
    S = H @ P_prior @ H.T + R
    try:
        K = np.linalg.solve(S.T, (P_prior @ H.T).T).T
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular innovation covariance: {exc}") from exc
    s_post = s_prior + K @ (z - H @ s_prior)
    P_post = (np.eye(len(s_prior)) - K @ H) @ P_prior
    return s_post, 0.5 * (P_post + P_post.T)


# ---------------------------------------------------------------------------
# dense multi-agent steps (H = I), one coordinate axis per estimate


@dataclass
class FilterEstimate:
    """Single-axis stacked estimate: mean (2NL,), covariance (2NL, 2NL)."""

    mean: np.ndarray
    cov: np.ndarray


def predict_step(est: FilterEstimate, u: np.ndarray, Q: np.ndarray,
                 F: np.ndarray, B: np.ndarray) -> FilterEstimate:
    """One-axis dense predict: S = F s + B u, P = F P F' + Q (symmetrized)."""
    mean = F @ est.mean + B @ u
    cov = F @ est.cov @ F.T + Q
    return FilterEstimate(mean=mean, cov=0.5 * (cov + cov.T))


def update_step(prior: FilterEstimate, obs: np.ndarray, R: np.ndarray) -> FilterEstimate:
    """One-axis dense H = I update; raises NumericError on a singular
    innovation covariance."""
    S = prior.cov + R
    try:
        K = np.linalg.solve(S.T, prior.cov.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular innovation covariance: {exc}") from exc
    mean = prior.mean + K @ (obs - prior.mean)
    cov = (np.eye(len(mean)) - K) @ prior.cov
    return FilterEstimate(mean=mean, cov=0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# learned noise


def noise_specs(cfg: ModelConfig) -> list[ParamSpec]:
    state_dim = 2 * cfg.n_agents * cfg.horizon
    specs = []
    for net in ("qnet", "rnet"):
        specs += dense_specs(f"{net}.reduce", state_dim, cfg.noise_reduce)
        specs += lstm_specs(f"{net}.lstm", cfg.noise_reduce, cfg.noise_hidden)
        specs += dense_specs(f"{net}.head", cfg.noise_hidden, state_dim)
    return specs


class _NoiseNet:
    """One diagonal-noise LSTM head, stepped once per filter timestamp.

    Inputs are the flattened per-axis stacked vectors, both axes batched;
    LSTM state persists across steps within a scene.
    """

    def __init__(self, prefix: str, cfg: ModelConfig):
        self.prefix = prefix
        self.cfg = cfg
        self.state = None

    def step(self, tape: Tape, params: ParamStore, blocked) -> Tensor:
        """blocked: (2, NL, 2) Tensor or ndarray -> diagonal (2, NL, 2)."""
        cfg = self.cfg
        NL = cfg.n_agents * cfg.horizon
        if self.state is None:
            self.state = lstm_zero_state(tape, cfg.noise_hidden, batch=(2,))
        x = blocked if isinstance(blocked, Tensor) else tape.input(blocked)
        x = tt.scale(tt.reshape(x, (2, 2 * NL)), cfg.noise_input_scale)
        x = fc_forward(tape, params, f"{self.prefix}.reduce", x)
        self.state = lstm_step(tape, params, f"{self.prefix}.lstm", x, self.state)
        raw = fc_forward(tape, params, f"{self.prefix}.head", self.state.h,
                         activation="identity")
        diag = tt.add(tt.softplus(raw), np.float64(cfg.sigma_min_sq))
        return tt.reshape(diag, (2, NL, 2))


def noise_covariances(history_S, history_T, cfg: ModelConfig, params: ParamStore,
                      tape: Tape | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Run both noise nets over aligned histories of blocked (2, NL, 2)
    states/observations; returns the final (Q_t, R_t) diagonals."""
    if len(history_S) != len(history_T) or not history_S:
        raise ConfigError("noise histories must be non-empty and equally long")
    tape = tape or Tape()
    qnet, rnet = _NoiseNet("qnet", cfg), _NoiseNet("rnet", cfg)
    for s_blocked, t_blocked in zip(history_S, history_T):
        q = qnet.step(tape, params, s_blocked)
        r = rnet.step(tape, params, t_blocked)
    return q.data.copy(), r.data.copy()


# ---------------------------------------------------------------------------
# scene-level filtering


@dataclass
class FilterStep:
    """One timestamp of the trainable filter (Tensors, blocked layout)."""

    prior_mean: object    # (2, NL, 2)
    prior_cov: object     # (2, NL, 2, 2)
    post_mean: object
    post_cov: object
    q_diag: object        # (2, NL, 2)
    r_diag: object


@dataclass
class FilterRun:
    steps: list
    anchor: np.ndarray    # (2,) position offset removed before filtering
    n_agents: int

    def post_mean_np(self, j: int) -> np.ndarray:
        return self.steps[j].post_mean.data

    def predicted_positions(self, j: int = 0) -> np.ndarray:
        """(L, N, 2) global-frame position forecast of estimate j."""
        pos, _ = unstack_mean(self.post_mean_np(j), self.n_agents)
        return pos + self.anchor

    def predicted_velocities(self, j: int = 0) -> np.ndarray:
        _, vel = unstack_mean(self.post_mean_np(j), self.n_agents)
        return vel

    def position_variances(self, j: int = 0) -> np.ndarray:
        """(L, N, 2) per-axis position variances of estimate j."""
        cov = self.steps[j].post_cov.data       # (2, NL, 2, 2)
        var = cov[:, :, 0, 0]                   # (2, NL)
        two, NL = var.shape
        L = NL // self.n_agents
        return var.reshape(2, self.n_agents, L).transpose(2, 1, 0)


def dynamic_extrapolation(scene: SceneWindow, cfg: ModelConfig,
                          anchor: np.ndarray) -> np.ndarray:
    """Sensor-only trajectory prior: roll the current positions/velocities
    forward with zero (or held) acceleration. Returns blocked (2, NL, 2)."""
    cur = scene.current_index
    p0 = scene.past.pos[:, cur] - anchor
    v0 = scene.past.vel[:, cur]
    if cfg.init_accel == "hold":
        accel = np.broadcast_to(scene.past.acc[:, cur], (cfg.horizon,) + p0.shape).copy()
    else:
        accel = np.zeros((cfg.horizon,) + p0.shape)
    traj = rollout(p0, v0, accel, scene.dt)
    return stack_trajectory(traj.positions, traj.velocities)


def sensor_controls(scene: SceneWindow, cfg: ModelConfig) -> np.ndarray:
    """Last observed accelerations held constant, stacked to (2, NL)."""
    cur = scene.current_index
    acc = np.broadcast_to(scene.past.acc[:, cur],
                          (cfg.horizon, cfg.n_agents, 2)).copy()
    return stack_controls(acc)


def filter_sequence(scene: SceneWindow, cfg: ModelConfig, params: ParamStore | None,
                    tape: Tape, accel_forecasts: list, traj_forecasts: list,
                    fixed_noise: tuple | None = None,
                    anchor: np.ndarray | None = None) -> FilterRun:
    """Filter one scene across the observation horizon.

    accel_forecasts[j]: (L, N, 2) interaction-aware accelerations made at
    timestamp t0+j (Tensor or ndarray); traj_forecasts[j]: the matching
    motion-layer TrajectoryForecast in scene-local coordinates. Timestamp
    t0+j consumes traj_forecasts[j] as its observation; the predict into
    t0+j uses accel_forecasts[j-1] as control (cfg.control="sensor" swaps
    in held sensor accelerations). The t0 prior is the sensor
    extrapolation with covariance p0*I + Q_t0.

    fixed_noise=(q, r) bypasses the noise nets with constant diagonals
    (scalars or (2, NL, 2) arrays), the configuration the dense reference
    path is checked against.
    """
    steps_n = len(traj_forecasts)
    if steps_n == 0 or len(accel_forecasts) != steps_n:
        raise ConfigError("need one acceleration and one trajectory forecast per timestamp")
    N, L = cfg.n_agents, cfg.horizon
    NL = N * L
    if scene.n_agents != N:
        raise ConfigError(f"scene has {scene.n_agents} agents, model expects {N}")
    if anchor is None:
        anchor = scene.past.pos[0, scene.current_index].copy()

    m1 = np.array([[1.0, scene.dt], [0.0, 1.0]])
    b_col = np.array([0.5 * scene.dt * scene.dt, scene.dt])
    eye2 = np.eye(2)

    if fixed_noise is not None:
        q_const = np.broadcast_to(np.asarray(fixed_noise[0], dtype=np.float64), (2, NL, 2)).copy()
        r_const = np.broadcast_to(np.asarray(fixed_noise[1], dtype=np.float64), (2, NL, 2)).copy()
        qnet = rnet = None
    else:
        if params is None:
            raise ConfigError("params are required unless fixed_noise is given")
        qnet, rnet = _NoiseNet("qnet", cfg), _NoiseNet("rnet", cfg)

    steps: list[FilterStep] = []
    post_mean = post_cov = None
    for j in range(steps_n):
        if j == 0:
            prior_mean = tape.input(dynamic_extrapolation(scene, cfg, anchor))
            base_cov = np.broadcast_to(cfg.p0 * eye2, (2, NL, 2, 2)).copy()
        else:
            if cfg.control == "forecast":
                u = stack_controls(accel_forecasts[j - 1])
            else:
                u = sensor_controls(scene, cfg)
            if isinstance(u, Tensor):
                bu = tt.mul(tt.reshape(u, (2, NL, 1)), b_col)
            else:
                bu = u[..., None] * b_col
            prior_mean = tt.add(tt.bmv(m1, post_mean), bu)
            base_cov = None
        q_diag = (tape.input(q_const) if qnet is None
                  else qnet.step(tape, params, prior_mean))
        if j == 0:
            prior_cov = tt.add(tt.diag2(q_diag), base_cov)
        else:
            propagated = tt.bmm(tt.bmm(m1, post_cov), m1.T)
            prior_cov = tt.add(propagated, tt.diag2(q_diag))
        prior_cov = _symmetrize(prior_cov)

        traj = traj_forecasts[j]
        obs = stack_trajectory(traj.positions, traj.velocities)
        r_diag = (tape.input(r_const) if rnet is None
                  else rnet.step(tape, params, obs))
        innovation_cov = tt.add(prior_cov, tt.diag2(r_diag))
        gain = tt.bmm(prior_cov, tt.inv2x2(innovation_cov))
        post_mean = tt.add(prior_mean, tt.bmv(gain, tt.sub(obs, prior_mean)))
        residual = tt.sub(np.broadcast_to(eye2, (2, NL, 2, 2)).copy(), gain)
        post_cov = _symmetrize(tt.bmm(residual, prior_cov))
        steps.append(FilterStep(prior_mean=prior_mean, prior_cov=prior_cov,
                                post_mean=post_mean, post_cov=post_cov,
                                q_diag=q_diag, r_diag=r_diag))
    return FilterRun(steps=steps, anchor=anchor, n_agents=N)


def _symmetrize(P: Tensor) -> Tensor:
    return tt.scale(tt.add(P, tt.transpose_last2(P)), 0.5)


def reference_filter_sequence(init_mean: np.ndarray, controls: list, observations: list,
                              q_diags: list, r_diags: list, n_agents: int, horizon: int,
                              dt: float, p0: float) -> list[FilterEstimate]:
    """Dense textbook run of the same protocol, built on the generic
    kf_predict/kf_update with H = I. One coordinate axis per call:
    init_mean (2NL,), controls[j] (NL,), observations[j] (2NL,),
    q_diags/r_diags[j] (2NL,). Returns the posterior estimates."""
    F, B = build_F_B(n_agents, horizon, dt)
    H = np.eye(2 * n_agents * horizon)
    estimates = []
    mean = cov = None
    for j in range(len(observations)):
        if j == 0:
            s_prior = init_mean.astype(np.float64)
            P_prior = p0 * np.eye(len(init_mean)) + np.diag(q_diags[0])
        else:
            s_prior, P_prior = kf_predict(mean, cov, F, np.diag(q_diags[j]),
                                          B=B, u=controls[j - 1])
        mean, cov = kf_update(s_prior, P_prior, observations[j], H, np.diag(r_diags[j]))
        estimates.append(FilterEstimate(mean=mean, cov=cov))
    return estimates
