import numpy as np
import pytest
from scipy import stats

from armpose import calibration as cal
from armpose import rotations as rot
from armpose.errors import CalibrationError, UndefinedCorrelationError


def make_state(rho_c=1013.0, theta_c=None, captured_at=0.0):
    if theta_c is None:
        theta_c = rot.IDENTITY_QUAT
    return cal.CalibrationState(rho_c=rho_c, theta_c=theta_c, captured_at=captured_at)


class TestMeanPressure:
    def test_single_sample(self):
        assert cal.mean_pressure([1013.0]) == 1013.0

    def test_symmetric_pair(self):
        assert cal.mean_pressure([1012.9, 1013.1]) == pytest.approx(1013.0, abs=1e-12)

    def test_matches_brute_force_sum(self):
        rng = np.random.default_rng(0)
        samples = 1013.0 + 0.05 * rng.standard_normal(150)
        oracle = sum(float(s) for s in samples) / len(samples)
        assert abs(cal.mean_pressure(samples) - oracle) < 1e-9

    def test_empty_window(self):
        with pytest.raises(CalibrationError):
            cal.mean_pressure([])


class TestMeanRotation:
    def test_copies(self):
        q = rot.random_quat(np.random.default_rng(1))
        np.testing.assert_allclose(cal.mean_rotation(np.tile(q, (7, 1))), q, atol=1e-12)

    def test_double_cover_alignment(self):
        q = rot.random_quat(np.random.default_rng(2))
        m = cal.mean_rotation(np.stack([q, -q]))
        assert abs(abs(np.dot(m, q)) - 1.0) < 1e-12

    def test_jittered_window(self):
        rng = np.random.default_rng(3)
        q = rot.random_quat(rng)
        jitter_angles = rng.uniform(0.0, np.deg2rad(2.0), size=150)
        axes = rng.normal(size=(150, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        samples = rot.quat_mul(q, rot.quat_from_axis_angle(axes, jitter_angles))
        m = cal.mean_rotation(samples)
        assert rot.quat_geodesic(m, q) < np.deg2rad(0.5)

    def test_empty_window(self):
        with pytest.raises(CalibrationError):
            cal.mean_rotation(np.zeros((0, 4)))


class TestRelativePressure:
    def test_subtraction(self):
        assert cal.relative_pressure(1013.2, make_state(1013.0)) == pytest.approx(0.2)

    def test_identity(self):
        assert cal.relative_pressure(1013.0, make_state(1013.0)) == 0.0

    def test_bijection(self):
        state = make_state(1007.3)
        rng = np.random.default_rng(4)
        for rho in 1000.0 + 20.0 * rng.random(20):
            assert cal.relative_pressure(rho, state) + state.rho_c == rho


class TestRelativeRotation:
    def test_self_is_identity(self):
        q = rot.random_quat(np.random.default_rng(5))
        state = make_state(theta_c=q)
        np.testing.assert_allclose(
            cal.relative_rotation(q, state), rot.IDENTITY_QUAT, atol=1e-9
        )

    def test_identity_reference(self):
        q = rot.random_quat(np.random.default_rng(6))
        got = cal.relative_rotation(q, make_state())
        assert abs(abs(np.dot(got, q)) - 1.0) < 1e-12

    def test_composition_oracle(self):
        rng = np.random.default_rng(7)
        theta_c = rot.random_quat(rng)
        theta = rot.random_quat(rng)
        state = make_state(theta_c=theta_c)
        rel = cal.relative_rotation(theta, state)
        v = rng.normal(size=3)
        lhs = rot.rotate_vec(rel, v)
        rhs = rot.rotate_vec(rot.quat_inv(theta_c), rot.rotate_vec(theta, v))
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestRelativeArmRotations:
    def test_identity_hip(self):
        rng = np.random.default_rng(8)
        q_l, q_u = rot.random_quat(rng), rot.random_quat(rng)
        rl, ru = cal.relative_arm_rotations(rot.IDENTITY_QUAT, q_l, q_u)
        np.testing.assert_allclose(rl, q_l, atol=1e-12)
        np.testing.assert_allclose(ru, q_u, atol=1e-12)

    def test_lower_equals_hip(self):
        rng = np.random.default_rng(9)
        q_h = rot.random_quat(rng)
        rl, _ = cal.relative_arm_rotations(q_h, q_h, rot.random_quat(rng))
        np.testing.assert_allclose(rl, rot.IDENTITY_QUAT, atol=1e-9)

    def test_fk_invariant_under_shared_hip_rotation(self):
        rng = np.random.default_rng(10)
        q_h = rot.random_quat(rng)
        q_l = rot.random_quat(rng)
        q_u = rot.random_quat(rng)
        rl, ru = cal.relative_arm_rotations(q_h, q_l, q_u)
        base = rot.forward_kinematics(ru, rl, 0.3, 0.25)
        for extra in rot.random_quat(rng, size=100):
            rl2, ru2 = cal.relative_arm_rotations(
                rot.quat_mul(extra, q_h), rot.quat_mul(extra, q_l), rot.quat_mul(extra, q_u)
            )
            moved = rot.forward_kinematics(ru2, rl2, 0.3, 0.25)
            np.testing.assert_allclose(moved[0], base[0], atol=1e-9)
            np.testing.assert_allclose(moved[1], base[1], atol=1e-9)


class TestKendallTau:
    def test_perfect_concordance(self):
        assert cal.kendall_tau([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_perfect_discordance(self):
        assert cal.kendall_tau([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_single_swap(self):
        # 5 concordant pairs, 1 discordant of 6 total
        assert cal.kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(2.0 / 3.0)

    def test_symmetry(self):
        rng = np.random.default_rng(11)
        xs = rng.normal(size=60)
        ys = rng.normal(size=60)
        assert cal.kendall_tau(xs, ys) == pytest.approx(cal.kendall_tau(ys, xs), abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(12)
        xs = rng.normal(size=80)
        ys = rng.normal(size=80)
        base = cal.kendall_tau(xs, ys)
        assert cal.kendall_tau(np.exp(xs), ys) == pytest.approx(base, abs=1e-12)
        assert cal.kendall_tau(xs, 3.0 * ys + 7.0) == pytest.approx(base, abs=1e-12)

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            xs = rng.integers(0, 6, size=40).astype(float)
            ys = rng.integers(0, 6, size=40).astype(float)
            if np.all(xs == xs[0]) or np.all(ys == ys[0]):
                continue
            assert cal.kendall_tau(xs, ys) == pytest.approx(
                _brute_force_tau_b(xs, ys), abs=1e-12
            )

    def test_matches_scipy(self):
        rng = np.random.default_rng(14)
        xs = rng.integers(0, 10, size=500).astype(float)
        ys = xs + rng.integers(0, 10, size=500)
        expected = stats.kendalltau(xs, ys, variant="b").statistic
        assert cal.kendall_tau(xs, ys) == pytest.approx(expected, abs=1e-12)

    def test_all_tied_raises(self):
        with pytest.raises(UndefinedCorrelationError):
            cal.kendall_tau([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(UndefinedCorrelationError):
            cal.kendall_tau([1.0, 2.0, 3.0], [5.0, 5.0, 5.0])


def _brute_force_tau_b(xs, ys):
    n = len(xs)
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = xs[i] - xs[j]
            dy = ys[i] - ys[j]
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                ties_x += 1
            elif dy == 0:
                ties_y += 1
            elif dx * dy > 0:
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) / 2
    nx = concordant + discordant + ties_y
    ny = concordant + discordant + ties_x
    return (concordant - discordant) / np.sqrt(nx * ny)


class TestCalibrationState:
    def test_json_round_trip(self):
        state = make_state(1005.5, rot.random_quat(np.random.default_rng(15)), 1234.0)
        back = cal.CalibrationState.from_dict(state.to_dict())
        assert back.rho_c == state.rho_c
        np.testing.assert_allclose(back.theta_c, state.theta_c, atol=1e-15)
        assert back.captured_at == state.captured_at

    def test_rejects_implausible_pressure(self):
        with pytest.raises(CalibrationError):
            make_state(rho_c=150.0)

    def test_normalizes_theta(self):
        state = make_state(theta_c=np.array([2.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(state.theta_c, rot.IDENTITY_QUAT)
