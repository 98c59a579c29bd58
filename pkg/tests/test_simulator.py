import math

import numpy as np
import pytest

from lifelong_slam.errors import ContractError, LogOrderingError, LogParseError
from lifelong_slam.geometry import Pose2
from lifelong_slam.logio import (
    GROUND_TRUTH,
    LASER,
    ODOMETRY,
    SensorRecord,
    read_log,
    write_log,
)
from lifelong_slam.simulator import (
    LidarSpec,
    OdometryNoise,
    ScenarioConfig,
    WorldSpec,
    build_scenario,
    densify_route,
    generate_world,
    parse_scenario_config,
    session_records,
    simulate_odometry,
    simulate_scan,
)


def small_lidar(beams=45, max_range=10.0, sigma=0.0):
    return LidarSpec(fov=math.radians(270), beams=beams, max_range=max_range,
                     range_sigma=sigma)


class TestGenerateWorld:
    def test_deterministic_for_seed(self):
        spec = WorldSpec(n_dynamic=6, sessions=4, change_fraction=0.5)
        w1 = generate_world(spec, seed=42)
        w2 = generate_world(spec, seed=42)
        np.testing.assert_array_equal(w1.static_segments, w2.static_segments)
        assert len(w1.dynamic_objects) == len(w2.dynamic_objects)
        for a, b in zip(w1.dynamic_objects, w2.dynamic_objects):
            np.testing.assert_array_equal(a.segments, b.segments)
            assert a.presence == b.presence

    def test_zero_change_fraction_static_schedule(self):
        world = generate_world(WorldSpec(n_dynamic=5, sessions=5, change_fraction=0.0), 1)
        for obj in world.dynamic_objects:
            assert obj.presence == [True] * 5

    def test_full_change_fraction_toggles_everything(self):
        world = generate_world(WorldSpec(n_dynamic=5, sessions=3, change_fraction=1.0), 1)
        for obj in world.dynamic_objects:
            assert obj.presence == [True, False, True]

    def test_infeasible_spec_rejected(self):
        with pytest.raises(ContractError):
            generate_world(WorldSpec(bounds=(0, 0, 1.0, 1.0), object_size=0.8), 0)
        with pytest.raises(ContractError):
            generate_world(WorldSpec(change_fraction=1.5), 0)


class TestSimulateScan:
    def test_wall_straight_ahead_exact_range(self):
        world = generate_world(WorldSpec(n_dynamic=0, sessions=1), 0)
        # robot 2 m from the right wall (x = 16), looking at it
        pose = Pose2(14.0, 6.0, 0.0)
        scan = simulate_scan(world, 0, pose, small_lidar(beams=5))
        forward = scan.points[2]  # center beam
        assert forward[0] == pytest.approx(2.0, abs=1e-9)
        assert forward[1] == pytest.approx(0.0, abs=1e-9)
        assert scan.hit_mask[2]

    def test_empty_world_all_no_hit(self):
        world = generate_world(
            WorldSpec(bounds=(0, 0, 100, 100), n_dynamic=0, sessions=1), 0
        )
        world.static_segments = np.empty((0, 4))
        scan = simulate_scan(world, 0, Pose2(50, 50, 0), small_lidar())
        assert not scan.hit_mask.any()
        np.testing.assert_allclose(np.linalg.norm(scan.points, axis=1), 10.0)

    def test_absent_object_lets_beams_through(self):
        spec = WorldSpec(bounds=(0, 0, 30, 30), n_dynamic=1, object_size=1.0,
                         sessions=2, change_fraction=1.0)
        world = generate_world(spec, seed=5)
        obj = world.dynamic_objects[0]
        cx = obj.segments[:, [0, 2]].mean()
        cy = obj.segments[:, [1, 3]].mean()
        heading = math.atan2(cy - 15.0, cx - 15.0)
        pose = Pose2(15.0, 15.0, heading)
        lidar = small_lidar(beams=3, max_range=40.0)
        with_obj = simulate_scan(world, 0, pose, lidar)
        without = simulate_scan(world, 1, pose, lidar)
        d_with = np.linalg.norm(with_obj.points[1])
        d_without = np.linalg.norm(without.points[1])
        assert d_with < d_without

    def test_pose_outside_bounds_rejected(self):
        world = generate_world(WorldSpec(n_dynamic=0, sessions=1), 0)
        with pytest.raises(ContractError):
            simulate_scan(world, 0, Pose2(99, 0, 0), small_lidar())

    def test_noise_only_on_hits_and_within_range(self):
        world = generate_world(WorldSpec(n_dynamic=0, sessions=1), 0)
        rng = np.random.default_rng(0)
        scan = simulate_scan(world, 0, Pose2(8, 6, 0), small_lidar(sigma=0.05), rng)
        norms = np.linalg.norm(scan.points, axis=1)
        assert norms.max() <= 10.0 + 1e-12
        no_hit = ~scan.hit_mask
        if no_hit.any():
            np.testing.assert_allclose(norms[no_hit], 10.0)


class TestSimulateOdometry:
    def test_zero_noise_exact(self):
        rng = np.random.default_rng(0)
        delta = Pose2(0.3, 0.01, 0.05)
        out = simulate_odometry(delta, OdometryNoise(0.0, 0.0), rng)
        assert out == delta

    def test_reproducible_with_seed(self):
        delta = Pose2(0.3, 0.0, 0.02)
        noise = OdometryNoise(0.05, 0.02)
        a = [simulate_odometry(delta, noise, np.random.default_rng(7)) for _ in range(3)]
        b = [simulate_odometry(delta, noise, np.random.default_rng(7)) for _ in range(3)]
        assert a[0] == b[0]

    def test_random_walk_variance_grows_linearly(self):
        # accumulated x-drift over n equal steps has variance ~ n * sigma^2
        noise = OdometryNoise(0.1, 0.0)
        step = Pose2(1.0, 0.0, 0.0)
        n = 50
        drifts = []
        for seed in range(300):
            rng = np.random.default_rng(seed)
            x = 0.0
            for _ in range(n):
                x += simulate_odometry(step, noise, rng).x - 1.0
            drifts.append(x)
        var = np.var(drifts)
        expected = n * 0.1**2
        assert expected / 2 < var < expected * 2


class TestRoutesAndScenarios:
    def test_densify_inserts_rotations_at_corners(self):
        poses = densify_route(np.array([[0, 0], [2, 0], [2, 2]]), step=0.5, max_turn=0.3)
        headings = [p.theta for p in poses]
        assert max(abs(headings[i + 1] - headings[i]) for i in range(len(headings) - 1)) <= 0.3 + 1e-9

    def test_session_records_deterministic_and_ordered(self):
        scenario = build_scenario(ScenarioConfig(sessions=2, seed=9, n_dynamic=4,
                                                 lidar=small_lidar()))
        r1 = session_records(scenario, 1)
        r2 = session_records(scenario, 1)
        assert len(r1) == len(r2)
        ts = [r.timestamp for r in r1]
        assert ts == sorted(ts)
        for a, b in zip(r1, r2):
            assert a.kind == b.kind and a.timestamp == b.timestamp
            if a.kind == LASER:
                np.testing.assert_array_equal(a.payload, b.payload)
            else:
                assert a.payload == b.payload


class TestLogRoundTrip:
    def test_write_read_identity(self, tmp_path):
        scenario = build_scenario(ScenarioConfig(sessions=1, seed=3, n_dynamic=3,
                                                 lidar=small_lidar(beams=20)))
        records = session_records(scenario, 0)[:40]
        path = str(tmp_path / "session.log")
        write_log(records, path)
        loaded = list(read_log(path))
        assert len(loaded) == len(records)
        for a, b in zip(records, loaded):
            assert a.kind == b.kind
            assert a.timestamp == b.timestamp
            if a.kind == LASER:
                np.testing.assert_array_equal(a.payload, b.payload)
            else:
                assert a.payload == b.payload

    def test_empty_file_empty_stream(self, tmp_path):
        path = tmp_path / "empty.log"
        path.write_text("")
        assert list(read_log(str(path))) == []

    def test_hand_written_lines(self, tmp_path):
        path = tmp_path / "hand.log"
        path.write_text(
            "# comment\n"
            "TRUTH 0.0 1.0 2.0 0.5\n"
            "ODOM 0.1 0.2 0.0 0.01\n"
            "LASER 0.1 3 1.0 2.0 3.0\n"
        )
        records = list(read_log(str(path)))
        assert [r.kind for r in records] == [GROUND_TRUTH, ODOMETRY, LASER]
        assert records[0].payload == Pose2(1.0, 2.0, 0.5)
        np.testing.assert_array_equal(records[2].payload, [1.0, 2.0, 3.0])

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.log"
        path.write_text("TRUTH 0 0 0 0\nLASER 1 2 9.0\n")
        with pytest.raises(LogParseError) as err:
            list(read_log(str(path)))
        assert "line 2" in str(err.value)

    def test_out_of_order_rejected(self, tmp_path):
        path = tmp_path / "ooo.log"
        path.write_text("TRUTH 1.0 0 0 0\nTRUTH 0.5 0 0 0\n")
        with pytest.raises(LogOrderingError):
            list(read_log(str(path)))

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(LogParseError):
            write_log([SensorRecord(0.0, "imu", Pose2.identity())], str(tmp_path / "x.log"))


def test_scenario_config_file_roundtrip(tmp_path):
    path = tmp_path / "scenario.txt"
    path.write_text(
        "name = square\n"
        "sessions = 3\n"
        "seed = 11\n"
        "change_fraction = 0.25   # toggle a quarter of the objects\n"
        "n_dynamic = 7\n"
        "bounds = 0 0 20 14\n"
        "lidar.beams = 181\n"
        "lidar.max_range = 9.0\n"
        "odom.translation_frac = 0.03\n"
    )
    config = parse_scenario_config(str(path))
    assert config.sessions == 3
    assert config.seed == 11
    assert config.n_dynamic == 7
    assert config.bounds == (0.0, 0.0, 20.0, 14.0)
    assert config.lidar.beams == 181
    assert config.lidar.max_range == 9.0
    assert config.odom_noise.translation_frac == 0.03
    bad = tmp_path / "bad.txt"
    bad.write_text("nonsense_key = 3\n")
    with pytest.raises(ContractError):
        parse_scenario_config(str(bad))
