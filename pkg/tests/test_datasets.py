"""Tests for track containers, scene windowing, serialization, the
synthetic generator, and NGSIM-format ingestion."""
from __future__ import annotations

import numpy as np
import pytest

from helpers import random_tracks, write_ngsim_csv
from trajkf.data.ngsim import FOOT, parse_ngsim_csv
from trajkf.data.scenes import (build_scenes, load_scenes, pairwise_distances,
                                repulsive_forces, save_scenes, scene_from_record,
                                scene_to_record)
from trajkf.data.synth import BehaviorConfig, synth_scenes
from trajkf.data.types import AgentTrack, scene_has_events
from trajkf.errors import DataError, SchemaError


def straight_track(agent_id, n_frames, x0, y0, speed, lane, dt=0.1, start_frame=0):
    t = (start_frame + np.arange(n_frames)) * dt
    pos = np.stack([x0 + speed * np.arange(n_frames) * dt,
                    np.full(n_frames, float(y0))], axis=-1)
    vel = np.tile((float(speed), 0.0), (n_frames, 1))
    zeros = np.zeros(n_frames)
    return AgentTrack(agent_id=agent_id, t=t, pos=pos, vel=vel,
                      acc=np.zeros((n_frames, 2)), heading=zeros.copy(),
                      yaw_rate=zeros.copy(), width=np.full(n_frames, 1.8),
                      length=np.full(n_frames, 4.5),
                      lane=np.full(n_frames, lane, dtype=np.int64))


class TestPairwiseQuantities:
    def test_distances_match_loop(self):
        rng = np.random.default_rng(3)
        pos = rng.normal(0.0, 20.0, size=(7, 2))
        got = pairwise_distances(pos)
        want = np.empty((7, 7))
        for i in range(7):
            for j in range(7):
                want[i, j] = np.hypot(*(pos[i] - pos[j]))
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_repulsion_cancels_at_matched_distance(self):
        # speeds 5 and 5 at dt 0.1 close exactly 1 m, so at distance 1
        # the exponent vanishes
        pos = np.array([[0.0, 0.0], [1.0, 0.0]])
        vel = np.array([[5.0, 0.0], [-5.0, 0.0]])
        e = repulsive_forces(pos, vel, 0.1)
        assert e[0, 1] == pytest.approx(1.0, abs=1e-15)

    def test_repulsion_stationary_overlap(self):
        pos = np.zeros((2, 2))
        vel = np.zeros((2, 2))
        e = repulsive_forces(pos, vel, 0.1)
        assert e[0, 1] == pytest.approx(1.0, abs=1e-15)

    def test_repulsion_fast_pair(self):
        pos = np.array([[0.0, 0.0], [2.0, 0.0]])
        vel = np.array([[10.0, 0.0], [10.0, 0.0]])
        e = repulsive_forces(pos, vel, 0.1)
        assert e[0, 1] == pytest.approx(1.0, abs=1e-15)
        pos2 = np.array([[0.0, 0.0], [1.0, 0.0]])
        e2 = repulsive_forces(pos2, vel, 0.1)
        assert e2[0, 1] == pytest.approx(np.e, rel=1e-12)

    def test_repulsion_static_unit_spacing(self):
        pos = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        e = repulsive_forces(pos, np.zeros((3, 2)), 0.1)
        assert e[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-12)
        assert e[0, 2] == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_repulsion_zero_diagonal_and_symmetric(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            pos = rng.normal(0.0, 10.0, size=(6, 2))
            vel = rng.normal(0.0, 5.0, size=(6, 2))
            e = repulsive_forces(pos, vel, 0.1)
            np.testing.assert_allclose(np.diag(e), 0.0)
            np.testing.assert_allclose(e, e.T, rtol=1e-12)
            off = e[~np.eye(6, dtype=bool)]
            assert np.all(off > 0)


class TestBuildScenes:
    def test_six_parallel_tracks_window_count(self):
        tracks = [straight_track(i, 90, x0=20.0 * i, y0=3.7 * (i % 2),
                                 speed=10.0, lane=1 + i % 2) for i in range(6)]
        stats = {}
        scenes = build_scenes(tracks, stats=stats)
        # 3 stride-10 starts per host, every candidate always eligible
        assert stats["windows_considered"] == 18
        assert stats["skipped_few_neighbors"] == 0
        assert len(scenes) == 18
        for sc in scenes:
            assert sc.n_agents == 6
            assert sc.history == 20 and sc.horizon == 50
            assert sc.agent_ids[0] == sc.host_id

    def test_too_few_tracks_yields_nothing(self):
        rng = np.random.default_rng(0)
        tracks = random_tracks(rng, 5, 70)
        stats = {}
        scenes = build_scenes(tracks, stats=stats)
        assert scenes == []
        assert stats["windows_considered"] > 0
        assert stats["skipped_few_neighbors"] == stats["windows_considered"]

    def test_partial_coverage_excludes_candidate(self):
        tracks = [straight_track(i, 70, x0=15.0 * i, y0=0.0, speed=10.0, lane=1)
                  for i in range(6)]
        # one candidate ends a frame early and can no longer fill a slot
        short = straight_track(5, 69, x0=75.0, y0=0.0, speed=10.0, lane=1)
        scenes = build_scenes(tracks[:5] + [short], hosts=[0], stride=70)
        assert scenes == []

    def test_neighbor_ranking_matches_bruteforce(self):
        rng = np.random.default_rng(21)
        tracks = random_tracks(rng, 8, 70)
        host = 3
        scenes = build_scenes(tracks, hosts=[host], stride=70)
        assert len(scenes) == 1
        sc = scenes[0]
        by_id = {tr.agent_id: tr for tr in tracks}
        ranked = sorted(
            (float(np.mean(np.linalg.norm(by_id[c].pos[:20] - by_id[host].pos[:20],
                                          axis=-1))), c)
            for c in by_id if c != host)
        want = [host] + [c for _, c in ranked[:5]]
        assert list(sc.agent_ids) == want

    def test_lane_tolerance_excludes_far_lane(self):
        tracks = [straight_track(i, 70, x0=12.0 * i, y0=0.0, speed=10.0, lane=1)
                  for i in range(6)]
        # nearest in space but two lanes over: must never be picked
        far = straight_track(99, 70, x0=0.0, y0=11.1, speed=10.0, lane=3)
        scenes = build_scenes(tracks + [far], hosts=[0], stride=70)
        assert len(scenes) == 1
        assert 99 not in scenes[0].agent_ids

    def test_input_order_irrelevant(self):
        rng = np.random.default_rng(5)
        tracks = random_tracks(rng, 7, 80)
        a = build_scenes(list(tracks))
        b = build_scenes(list(reversed(tracks)))
        assert len(a) == len(b)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.agent_ids, sb.agent_ids)
            np.testing.assert_array_equal(sa.past.pos, sb.past.pos)
            np.testing.assert_array_equal(sa.future.pos, sb.future.pos)

    def test_pairwise_matrices_consistent(self):
        rng = np.random.default_rng(9)
        tracks = random_tracks(rng, 6, 70)
        sc = build_scenes(tracks, hosts=[0], stride=70)[0]
        full = sc.full()
        for k in (0, 19, 69):
            np.testing.assert_allclose(sc.distances[k],
                                       pairwise_distances(full.pos[:, k]),
                                       rtol=0, atol=1e-12)
            np.testing.assert_allclose(sc.repulsion[k],
                                       repulsive_forces(full.pos[:, k],
                                                        full.vel[:, k], sc.dt),
                                       rtol=0, atol=1e-12)

    def test_duplicate_agent_ids_rejected(self):
        rng = np.random.default_rng(1)
        tracks = random_tracks(rng, 6, 70)
        tracks[1].agent_id = tracks[0].agent_id
        with pytest.raises(DataError, match="duplicate"):
            build_scenes(tracks)

    def test_mismatched_frame_spacing_rejected(self):
        rng = np.random.default_rng(1)
        tracks = random_tracks(rng, 6, 70)
        tracks[2].t = tracks[2].t * 2.0
        with pytest.raises(DataError, match="spacing"):
            build_scenes(tracks)


class TestSceneSerialization:
    def test_round_trip_preserves_everything(self, tmp_path):
        scenes = synth_scenes(3, seed=4)
        path = tmp_path / "scenes.ndjson"
        save_scenes(str(path), scenes)
        back = load_scenes(str(path))
        assert len(back) == 3
        for a, b in zip(scenes, back):
            assert a.host_id == b.host_id
            assert a.start_time == b.start_time and a.dt == b.dt
            np.testing.assert_array_equal(a.agent_ids, b.agent_ids)
            np.testing.assert_array_equal(a.past.pos, b.past.pos)
            np.testing.assert_array_equal(a.future.vel, b.future.vel)
            np.testing.assert_array_equal(a.past.lane, b.past.lane)
            np.testing.assert_array_equal(a.repulsion, b.repulsion)

    def test_second_save_is_byte_identical(self, tmp_path):
        scenes = synth_scenes(2, seed=8)
        p1 = tmp_path / "a.ndjson"
        p2 = tmp_path / "b.ndjson"
        save_scenes(str(p1), scenes)
        save_scenes(str(p2), load_scenes(str(p1)))
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_line_reported_with_number(self, tmp_path):
        scenes = synth_scenes(2, seed=8)
        path = tmp_path / "bad.ndjson"
        save_scenes(str(path), scenes)
        lines = path.read_text().splitlines()
        lines[1] = lines[1][:40]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match=":2:"):
            load_scenes(str(path))

    def test_unknown_format_version_rejected(self):
        rec = scene_to_record(synth_scenes(1, seed=0)[0])
        rec["format_version"] = 999
        with pytest.raises(DataError, match="format_version"):
            scene_from_record(rec)

    def test_empty_list_round_trips(self, tmp_path):
        path = tmp_path / "none.ndjson"
        save_scenes(str(path), [])
        assert load_scenes(str(path)) == []


class TestSyntheticScenes:
    def test_deterministic_for_seed(self):
        a = synth_scenes(4, seed=7)
        b = synth_scenes(4, seed=7)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.past.pos, sb.past.pos)
            np.testing.assert_array_equal(sa.future.acc, sb.future.acc)
            np.testing.assert_array_equal(sa.agent_ids, sb.agent_ids)

    def test_different_seeds_differ(self):
        a = synth_scenes(1, seed=1)[0]
        b = synth_scenes(1, seed=2)[0]
        assert not np.array_equal(a.past.pos, b.past.pos)

    def test_reintegration_reproduces_positions(self):
        """Stored accelerations must regenerate stored positions under the
        same explicit integration scheme the rest of the pipeline uses."""
        for scene in synth_scenes(5, seed=13):
            full = scene.full()
            T = full.n_frames
            pos = np.empty_like(full.pos)
            vel = np.empty_like(full.vel)
            pos[:, 0] = full.pos[:, 0]
            vel[:, 0] = full.vel[:, 0]
            dt = scene.dt
            for k in range(T - 1):
                pos[:, k + 1] = pos[:, k] + vel[:, k] * dt + 0.5 * full.acc[:, k] * dt * dt
                vel[:, k + 1] = vel[:, k] + full.acc[:, k] * dt
            np.testing.assert_allclose(pos, full.pos, rtol=0, atol=1e-9)

    def test_quiet_config_gives_straight_tracks(self):
        cfg = BehaviorConfig(brake_prob=0.0, lane_change_prob=0.0,
                             speed_jitter=0.0, gap_range=(60.0, 70.0))
        scenes = synth_scenes(3, seed=2, config=cfg)
        for scene in scenes:
            full = scene.full()
            np.testing.assert_array_equal(full.acc, 0.0)
            np.testing.assert_allclose(np.diff(full.pos[:, :, 1], axis=1), 0.0,
                                       rtol=0, atol=1e-12)
            steps = np.diff(full.pos[:, :, 0], axis=1)
            np.testing.assert_allclose(steps - steps[:, :1], 0.0,
                                       rtol=0, atol=1e-12)
            assert not scene_has_events(scene)

    def test_window_split_and_shapes(self):
        scene = synth_scenes(1, seed=3)[0]
        assert scene.history == 20
        assert scene.horizon == 50
        assert scene.n_agents == 6
        assert scene.past.pos.shape == (6, 20, 2)
        assert scene.future.pos.shape == (6, 50, 2)
        assert scene.distances.shape == (70, 6, 6)
        assert scene.current_index == 19

    def test_default_config_produces_events(self):
        scenes = synth_scenes(20, seed=5)
        assert any(scene_has_events(s) for s in scenes)

    def test_pdm_agents_supported(self):
        cfg = BehaviorConfig(agent_model="pdm")
        scene = synth_scenes(1, seed=6, config=cfg)[0]
        assert scene.n_agents == 6
        scene.validate()


def _csv_rows(rows):
    header = "Vehicle_ID,Frame_ID,Local_X,Local_Y,v_Vel,v_Acc,v_Width,v_Length,Lane_ID"
    return "\n".join([header] + rows) + "\n"


def _straight_rows(vid, frames, x0_m, speed_m, lane=1, y_m=0.0):
    rows = []
    for i, f in enumerate(frames):
        x = x0_m + speed_m * 0.1 * i
        rows.append(f"{vid},{f},{x / FOOT!r},{y_m / FOOT!r},{speed_m / FOOT!r},"
                    f"0.0,{1.8 / FOOT!r},{4.5 / FOOT!r},{lane}")
    return rows


class TestNgsimParsing:
    def test_two_vehicles_parse_and_convert(self, tmp_path):
        path = tmp_path / "two.csv"
        rows = _straight_rows(1, range(5), x0_m=10.0, speed_m=10.0)
        rows += _straight_rows(2, range(5), x0_m=25.0, speed_m=12.0)
        path.write_text(_csv_rows(rows))
        stats = {}
        tracks = parse_ngsim_csv(str(path), stats=stats)
        assert [tr.agent_id for tr in tracks] == [1, 2]
        assert all(len(tr) == 5 for tr in tracks)
        assert stats == {"rows": 10, "vehicles": 2, "tracks": 2,
                         "split_vehicles": 0, "dropped_short": 0}
        np.testing.assert_allclose(tracks[0].pos[0], [10.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(tracks[0].vel, [[10.0, 0.0]] * 5, atol=1e-9)
        np.testing.assert_allclose(tracks[1].pos[0], [25.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(tracks[0].width, 1.8, atol=1e-9)
        np.testing.assert_allclose(tracks[0].t, np.arange(5) * 0.1, atol=1e-12)

    def test_feet_value_from_reference_table(self, tmp_path):
        path = tmp_path / "ref.csv"
        path.write_text(_csv_rows([f"1,{f},32.8084,0.0,32.8084,0.0,6.0,15.0,1"
                                   for f in range(3)]))
        tracks = parse_ngsim_csv(str(path))
        assert tracks[0].pos[0, 0] == pytest.approx(10.0, abs=1e-4)

    def test_meters_passthrough(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text(_csv_rows([f"1,{f},{5.0 + f},2.5,10.0,0.0,1.8,4.5,1"
                                   for f in range(4)]))
        tracks = parse_ngsim_csv(str(path), units="meters")
        np.testing.assert_allclose(tracks[0].pos[:, 0], [5.0, 6.0, 7.0, 8.0],
                                   atol=1e-12)

    def test_unit_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        xs = rng.uniform(0.0, 300.0, size=6)
        path = tmp_path / "rt.csv"
        rows = [f"1,{f},{float(x) / FOOT!r},0.0,{10.0 / FOOT!r},0.0,"
                f"{1.8 / FOOT!r},{4.5 / FOOT!r},1" for f, x in enumerate(xs)]
        path.write_text(_csv_rows(rows))
        tracks = parse_ngsim_csv(str(path))
        np.testing.assert_allclose(tracks[0].pos[:, 0], xs, rtol=0, atol=1e-9)

    def test_duplicate_frame_names_vehicle(self, tmp_path):
        path = tmp_path / "dup.csv"
        rows = _straight_rows(77, [0, 1, 1, 2], x0_m=0.0, speed_m=10.0)
        path.write_text(_csv_rows(rows))
        with pytest.raises(DataError, match="77"):
            parse_ngsim_csv(str(path))

    def test_missing_column_is_schema_error(self, tmp_path):
        path = tmp_path / "cols.csv"
        path.write_text("Vehicle_ID,Frame_ID,Local_X\n1,0,0.0\n1,1,1.0\n")
        with pytest.raises(SchemaError, match="Local_Y"):
            parse_ngsim_csv(str(path))

    def test_unknown_units_rejected(self, tmp_path):
        path = tmp_path / "u.csv"
        path.write_text(_csv_rows(_straight_rows(1, range(3), 0.0, 10.0)))
        with pytest.raises(SchemaError, match="units"):
            parse_ngsim_csv(str(path), units="furlongs")

    def test_gap_splits_into_segments(self, tmp_path):
        path = tmp_path / "gap.csv"
        rows = _straight_rows(7, range(10), x0_m=0.0, speed_m=10.0)
        rows += _straight_rows(7, range(15, 25), x0_m=50.0, speed_m=10.0)
        path.write_text(_csv_rows(rows))
        stats = {}
        tracks = parse_ngsim_csv(str(path), stats=stats)
        assert [tr.agent_id for tr in tracks] == [700000, 700001]
        assert [len(tr) for tr in tracks] == [10, 10]
        assert stats["split_vehicles"] == 1
        np.testing.assert_allclose(tracks[1].t[0], 1.5, atol=1e-12)

    def test_single_frame_segment_dropped(self, tmp_path):
        path = tmp_path / "short.csv"
        rows = _straight_rows(4, [0, 1, 2, 3, 10], x0_m=0.0, speed_m=10.0)
        path.write_text(_csv_rows(rows))
        stats = {}
        tracks = parse_ngsim_csv(str(path), stats=stats)
        assert len(tracks) == 1 and len(tracks[0]) == 4
        assert stats["dropped_short"] == 1

    def test_column_map_override(self, tmp_path):
        path = tmp_path / "alt.csv"
        body = _csv_rows(_straight_rows(1, range(4), 0.0, 10.0))
        path.write_text(body.replace("Vehicle_ID", "vid", 1))
        with pytest.raises(SchemaError):
            parse_ngsim_csv(str(path))
        tracks = parse_ngsim_csv(str(path), column_map={"vehicle_id": "vid"})
        assert len(tracks) == 1

    def test_generated_corpus_feeds_windowing(self, tmp_path):
        path = tmp_path / "corpus.csv"
        write_ngsim_csv(path, n_vehicles=8, n_frames=90, seed=0)
        tracks = parse_ngsim_csv(str(path))
        assert len(tracks) == 8
        scenes = build_scenes(tracks, stats={})
        assert len(scenes) > 0
        for sc in scenes:
            assert sc.n_agents == 6
            assert sc.n_frames == 70
