import numpy as np
import pytest

from armpose import emulator as emu
from armpose import frames as fr
from armpose import rotations as rot
from armpose.calibration import relative_arm_rotations


def short_cfg(**kw):
    base = dict(duration_s=12.0, seed=7)
    base.update(kw)
    return emu.EmuConfig(**base)


@pytest.fixture(scope="module")
def quiet_session():
    cfg = short_cfg(duration_s=20.0).noiseless()
    return cfg, emu.synth_session(cfg)


class TestConfig:
    def test_json_round_trip(self):
        cfg = short_cfg(pressure_offset_hpa=4.5, sigma_pres_hpa=0.02)
        back = emu.EmuConfig.from_json(cfg.to_json())
        assert back == cfg

    def test_rejects_short_session(self):
        with pytest.raises(ValueError):
            emu.EmuConfig(duration_s=5.0, cal_window_s=3.0)

    def test_rejects_bad_rates(self):
        with pytest.raises(ValueError):
            emu.EmuConfig(duration_s=30.0, sensor_rate_hz=0.0)


class TestStatics:
    def test_hold_phase_is_static(self, quiet_session):
        cfg, (sensors, _) = quiet_session
        hold = [s for s in sensors if 200.0 <= s.t <= 2300.0]
        assert len(hold) > 50
        for s in hold:
            np.testing.assert_allclose(s.lacc, 0.0, atol=1e-9)
            np.testing.assert_allclose(s.gyro, 0.0, atol=1e-9)
        pressures = {s.pres for s in hold}
        assert max(pressures) - min(pressures) < 1e-12

    def test_gravity_magnitude(self, quiet_session):
        _, (sensors, _) = quiet_session
        norms = [np.linalg.norm(s.grav) for s in sensors]
        assert max(abs(n - emu.GRAVITY_M_S2) for n in norms) < 1e-9

    def test_noisy_gravity_stays_plausible(self):
        sensors, _ = emu.synth_session(short_cfg())
        norms = [np.linalg.norm(s.grav) for s in sensors]
        assert min(norms) > 9.0 and max(norms) < 10.6


class TestPressure:
    def test_gradient_model(self):
        assert emu.pressure_at(1013.25, 1.0) - emu.pressure_at(1013.25, 0.0) == pytest.approx(-0.12)

    def test_session_tracks_wrist_height(self, quiet_session):
        cfg, (sensors, _) = quiet_session
        # chest hold wrist sits at (0, -l_u, 0.something); forward hold at y=0
        chest = [s.pres for s in sensors if 500.0 <= s.t <= 2000.0]
        fwd = [s.pres for s in sensors if 3500.0 <= s.t <= 5500.0]
        delta = np.mean(fwd) - np.mean(chest)
        assert delta == pytest.approx(emu.PRESSURE_GRADIENT_HPA_PER_M * cfg.l_u, abs=1e-9)


class TestTruthStream:
    def test_fk_sphere_invariants(self, quiet_session):
        cfg, (_, truths) = quiet_session
        for g in truths[:: max(1, len(truths) // 200)]:
            q_l_r, q_u_r = relative_arm_rotations(g.q_h, g.q_l, g.q_u)
            p_e, p_w = rot.forward_kinematics(q_u_r, q_l_r, g.l_u, g.l_l)
            assert abs(np.linalg.norm(p_e) - g.l_u) < 1e-9
            assert abs(np.linalg.norm(p_w - p_e) - g.l_l) < 1e-9

    def test_rates_and_counts(self):
        cfg = short_cfg(duration_s=10.0)
        sensors, truths = emu.synth_session(cfg)
        assert abs(len(sensors) - 500) <= 1
        assert abs(len(truths) - 1200) <= 1

    def test_hip_constant(self, quiet_session):
        _, (_, truths) = quiet_session
        base = truths[0].q_h
        for g in truths[::97]:
            np.testing.assert_array_equal(g.q_h, base)


class TestPairing:
    def test_all_sensor_frames_pair_with_small_gap(self, quiet_session):
        _, (sensors, truths) = quiet_session
        pairs = fr.merge_nearest(sensors, truths)
        assert len(pairs) == len(sensors)
        max_gap = max(p.dt_pair for p in pairs)
        assert max_gap <= 1000.0 / 120.0 / 2.0 + 1e-9  # 4.2 ms


class TestSelfConsistency:
    def test_gyro_integrates_back_to_orientation(self, quiet_session):
        cfg, (sensors, _) = quiet_session
        motion = [s for s in sensors if s.t >= 6500.0]
        h = 1.0 / cfg.sensor_rate_hz
        q = motion[0].theta.copy()
        for a, b in zip(motion[:-1], motion[1:]):
            step = 0.5 * (a.gyro + b.gyro) * h
            q = rot.quat_mul(q, rot.quat_from_rotvec(step))
        span_s = (motion[-1].t - motion[0].t) / 1000.0
        budget = np.deg2rad(2.0) * max(span_s / 10.0, 1.0)
        assert rot.quat_geodesic(q, motion[-1].theta) < budget

    def test_motion_actually_moves(self, quiet_session):
        _, (sensors, _) = quiet_session
        motion = [s for s in sensors if s.t >= 7000.0]
        speeds = [np.linalg.norm(s.gyro) for s in motion]
        assert max(speeds) > 0.5


class TestDeterminism:
    def test_same_seed_same_session(self):
        cfg = short_cfg()
        s1, g1 = emu.synth_session(cfg)
        s2, g2 = emu.synth_session(cfg)
        assert len(s1) == len(s2)
        np.testing.assert_array_equal(s1[100].values(), s2[100].values())
        np.testing.assert_array_equal(g1[500].q_u, g2[500].q_u)

    def test_seed_override(self):
        cfg = short_cfg(seed=1)
        s1, _ = emu.synth_session(cfg, seed=2)
        s2, _ = emu.synth_session(emu.EmuConfig(duration_s=12.0, seed=2))
        np.testing.assert_array_equal(s1[50].values(), s2[50].values())

    def test_different_seeds_differ(self):
        base = short_cfg(seed=1)
        s1, _ = emu.synth_session(base)
        s2, _ = emu.synth_session(base, seed=99)
        assert not np.array_equal(s1[400].values(), s2[400].values())


class TestMountRotation:
    def test_mount_rotates_watch_frame(self):
        cfg = short_cfg().noiseless()
        mounted = emu.EmuConfig(
            duration_s=12.0, seed=7,
            mount=tuple(rot.quat_from_axis_angle([1.0, 0, 0], np.pi / 2)),
        ).noiseless()
        s_plain, _ = emu.synth_session(cfg)
        s_mount, _ = emu.synth_session(mounted)
        # same trajectory, watch orientation differs by the mount rotation
        i = 100
        expected = rot.quat_mul(s_plain[i].theta, np.asarray(mounted.mount))
        assert abs(abs(np.dot(expected, s_mount[i].theta)) - 1.0) < 1e-9
