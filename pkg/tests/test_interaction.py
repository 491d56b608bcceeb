"""Tests for feature assembly, standardization, and the social
encoder-decoder acceleration model."""
from __future__ import annotations

import numpy as np
import pytest

from helpers import FD_EPS, FD_RTOL, random_scene, tiny_cfg
from trajkf.data.synth import BehaviorConfig, synth_scenes
from trajkf.errors import ConfigError, DataError
from trajkf.interaction import (N_AGENT_CHANNELS, N_PAIR_CHANNELS, FeatureScaler,
                                InteractionFeatures, build_features, fit_scaler,
                                interaction_forward, interaction_specs)
from trajkf.nn import tensor as tt
from trajkf.nn.optim import adam_step
from trajkf.nn.params import ParamStore, init_params
from trajkf.nn.tensor import Tape


def random_features(rng, cfg):
    T, N = cfg.history, cfg.n_agents
    agent = rng.normal(0.0, 1.0, size=(T, N, N_AGENT_CHANNELS))
    pairwise = rng.normal(0.0, 1.0, size=(T, N, N, N_PAIR_CHANNELS))
    return InteractionFeatures(agent=agent, pairwise=pairwise)


class TestBuildFeatures:
    def test_channels_match_scene_arrays(self):
        rng = np.random.default_rng(0)
        scene = random_scene(rng, n_agents=4, history=6, horizon=5)
        f = build_features(scene)
        assert f.agent.shape == (6, 4, N_AGENT_CHANNELS)
        assert f.pairwise.shape == (6, 4, 4, N_PAIR_CHANNELS)
        np.testing.assert_array_equal(f.agent[..., 0:2],
                                      scene.past.acc.transpose(1, 0, 2))
        np.testing.assert_array_equal(f.agent[..., 2], scene.past.width.T)
        np.testing.assert_array_equal(f.agent[..., 3], scene.past.length.T)
        np.testing.assert_array_equal(f.pairwise[..., 0], scene.distances[:6])
        np.testing.assert_array_equal(f.pairwise[..., 1], scene.repulsion[:6])

    def test_quiet_traffic_has_zero_accel_channels(self):
        cfg = BehaviorConfig(brake_prob=0.0, lane_change_prob=0.0,
                             speed_jitter=0.0, gap_range=(60.0, 70.0))
        scene = synth_scenes(1, seed=9, config=cfg)[0]
        f = build_features(scene)
        np.testing.assert_array_equal(f.agent[..., 0:2], 0.0)

    def test_window_can_slide_into_future(self):
        rng = np.random.default_rng(1)
        scene = random_scene(rng, n_agents=3, history=5, horizon=6)
        f = build_features(scene, end=scene.current_index + 3)
        full = scene.full()
        np.testing.assert_array_equal(f.agent[..., 0:2],
                                      full.acc[:, 3:8].transpose(1, 0, 2))

    def test_out_of_range_window_rejected(self):
        rng = np.random.default_rng(2)
        scene = random_scene(rng, n_agents=3, history=5, horizon=6)
        with pytest.raises(DataError, match="window"):
            build_features(scene, end=2)
        with pytest.raises(DataError, match="window"):
            build_features(scene, end=scene.n_frames)

    def test_non_finite_values_rejected(self):
        rng = np.random.default_rng(3)
        scene = random_scene(rng, n_agents=3, history=5, horizon=6)
        scene.past.acc[1, 2, 0] = np.nan
        with pytest.raises(DataError, match="non-finite"):
            build_features(scene)

    def test_repeated_builds_identical(self):
        rng = np.random.default_rng(4)
        scene = random_scene(rng)
        a = build_features(scene)
        b = build_features(scene)
        np.testing.assert_array_equal(a.agent, b.agent)
        np.testing.assert_array_equal(a.pairwise, b.pairwise)


class TestFeatureScaler:
    def test_standardized_moments(self):
        scenes = synth_scenes(6, seed=3)
        scaler = fit_scaler(scenes)
        agents, pairs = [], []
        for scene in scenes:
            f = build_features(scene, scaler=scaler)
            agents.append(f.agent.reshape(-1, N_AGENT_CHANNELS))
            pairs.append(f.pairwise.reshape(-1, N_PAIR_CHANNELS))
        agent = np.concatenate(agents)
        pair = np.concatenate(pairs)
        np.testing.assert_allclose(agent.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(agent.std(axis=0), 1.0, atol=1e-6)
        np.testing.assert_allclose(pair.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(pair.std(axis=0), 1.0, atol=1e-6)

    def test_constant_channel_keeps_unit_std(self):
        rng = np.random.default_rng(5)
        scene = random_scene(rng)
        scene.past.width[:] = 1.8
        scene.past.length[:] = 4.5
        scaler = fit_scaler([scene])
        assert scaler.agent_std[2] == 1.0
        assert scaler.agent_std[3] == 1.0
        f = build_features(scene, scaler=scaler)
        assert np.all(np.isfinite(f.agent))

    def test_dict_round_trip(self):
        scaler = fit_scaler(synth_scenes(2, seed=4))
        back = FeatureScaler.from_dict(scaler.to_dict())
        np.testing.assert_array_equal(back.agent_mean, scaler.agent_mean)
        np.testing.assert_array_equal(back.agent_std, scaler.agent_std)
        np.testing.assert_array_equal(back.pair_mean, scaler.pair_mean)
        np.testing.assert_array_equal(back.pair_std, scaler.pair_std)


class TestInteractionForward:
    def test_zero_parameters_give_zero_forecast(self):
        cfg = tiny_cfg()
        specs = interaction_specs(cfg)
        store = ParamStore({s.name: np.zeros(s.shape) for s in specs})
        rng = np.random.default_rng(0)
        feats = random_features(rng, cfg)
        tape = Tape()
        out = interaction_forward(tape, store, cfg, feats,
                                  start_accel=rng.normal(size=(cfg.n_agents, 2)))
        assert out.data.shape == (cfg.horizon, cfg.n_agents, 2)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_outputs_bounded_by_a_max(self):
        cfg = tiny_cfg(a_max=2.5)
        store = init_params(interaction_specs(cfg), seed=1)
        for name in store.params:
            store.params[name] *= 50.0
        rng = np.random.default_rng(1)
        feats = random_features(rng, cfg)
        out = interaction_forward(Tape(), store, cfg, feats,
                                  start_accel=rng.normal(size=(cfg.n_agents, 2)))
        assert np.all(np.abs(out.data) <= 2.5)
        assert np.max(np.abs(out.data)) > 0.5

    def test_deterministic(self):
        cfg = tiny_cfg()
        store = init_params(interaction_specs(cfg), seed=2)
        rng = np.random.default_rng(2)
        feats = random_features(rng, cfg)
        start = rng.normal(size=(cfg.n_agents, 2))
        a = interaction_forward(Tape(), store, cfg, feats, start).data
        b = interaction_forward(Tape(), store, cfg, feats, start).data
        np.testing.assert_array_equal(a, b)

    def test_features_influence_output(self):
        cfg = tiny_cfg()
        store = init_params(interaction_specs(cfg), seed=3)
        rng = np.random.default_rng(3)
        start = rng.normal(size=(cfg.n_agents, 2))
        a = interaction_forward(Tape(), store, cfg, random_features(rng, cfg), start).data
        b = interaction_forward(Tape(), store, cfg, random_features(rng, cfg), start).data
        assert not np.array_equal(a, b)

    def test_agent_count_mismatch_rejected(self):
        cfg = tiny_cfg(n_agents=3)
        store = init_params(interaction_specs(cfg), seed=4)
        wrong = tiny_cfg(n_agents=4)
        rng = np.random.default_rng(4)
        feats = random_features(rng, wrong)
        with pytest.raises(ConfigError, match="agents"):
            interaction_forward(Tape(), store, cfg, feats,
                                start_accel=np.zeros((4, 2)))

    def test_teacher_forcing_changes_decoding(self):
        cfg = tiny_cfg(horizon=4)
        store = init_params(interaction_specs(cfg), seed=5)
        rng = np.random.default_rng(5)
        feats = random_features(rng, cfg)
        start = rng.normal(size=(cfg.n_agents, 2))
        teacher = rng.normal(0.0, 2.0, size=(cfg.horizon, cfg.n_agents, 2))
        free = interaction_forward(Tape(), store, cfg, feats, start).data
        forced = interaction_forward(Tape(), store, cfg, feats, start,
                                     teacher_accel=teacher,
                                     teacher_mask=np.ones(cfg.horizon, dtype=bool)).data
        np.testing.assert_array_equal(free[0], forced[0])
        assert not np.array_equal(free[1:], forced[1:])

    def test_parameter_gradients_match_finite_differences(self):
        cfg = tiny_cfg(n_agents=3, history=3, horizon=2)
        store = init_params(interaction_specs(cfg), seed=6)
        rng = np.random.default_rng(6)
        feats = random_features(rng, cfg)
        start = rng.normal(size=(cfg.n_agents, 2))
        w = rng.normal(size=(cfg.horizon, cfg.n_agents, 2))

        def loss_value():
            tape = Tape()
            out = interaction_forward(tape, store, cfg, feats, start)
            return tape, tt.sum_all(tt.mul(out, tape.input(w)))

        tape, loss = loss_value()
        tt.backward(loss)
        store.zero_grads()
        store.harvest(tape)

        picked = ["inter.conv1.W", "inter.fc1.W", "inter.enc.W",
                  "inter.dec.U", "inter.head.W", "inter.head.b"]
        for name in picked:
            base = store.params[name]
            idx = rng.choice(base.size, size=min(4, base.size), replace=False)
            for i in idx:
                keep = base.ravel()[i]
                base.ravel()[i] = keep + FD_EPS
                hi = float(loss_value()[1].data)
                base.ravel()[i] = keep - FD_EPS
                lo = float(loss_value()[1].data)
                base.ravel()[i] = keep
                want = (hi - lo) / (2.0 * FD_EPS)
                got = store.grads[name].ravel()[i]
                denom = max(abs(got), abs(want), 1e-6)
                assert abs(got - want) / denom <= FD_RTOL, \
                    f"{name}[{i}]: analytic {got:.3e} vs fd {want:.3e}"

    def test_regression_to_constant_target(self):
        """A tiny model fed a fixed feature window should fit a constant
        acceleration target in a few dozen optimizer steps."""
        cfg = tiny_cfg(n_agents=3, history=3, horizon=3)
        store = init_params(interaction_specs(cfg), seed=7)
        rng = np.random.default_rng(7)
        feats = random_features(rng, cfg)
        start = np.zeros((cfg.n_agents, 2))
        target = np.ones((cfg.horizon, cfg.n_agents, 2))
        for _ in range(150):
            tape = Tape()
            out = interaction_forward(tape, store, cfg, feats, start)
            diff = tt.sub(out, tape.input(target))
            loss = tt.scale(tt.sum_all(tt.square(diff)), 1.0 / target.size)
            tt.backward(loss)
            store.harvest(tape)
            adam_step(store, lr=0.02)
        final = interaction_forward(Tape(), store, cfg, feats, start).data
        assert abs(float(final.mean()) - 1.0) < 0.2
