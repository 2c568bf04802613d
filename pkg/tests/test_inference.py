import json

import numpy as np
import pytest

from armpose import inference as inf
from armpose import network as nn
from armpose.codecs import ArmPose
from armpose.errors import NoStochasticityError, ShapeError

L_U, L_L = 0.30, 0.25


def make_model(arch="feedforward", codec="quat", dropout=0.2, width=16, seed=0):
    depth = 2
    input_dim = 16 if arch == "feedforward" else 17
    spec = nn.ModelSpec(
        arch=arch, codec=codec, width=width, depth=depth, dropout=dropout,
        input_dim=input_dim,
    )
    params = nn.init_params(spec, np.random.default_rng(seed), dtype=np.float64)
    meta = nn.TrainingMeta(epochs_run=0, best_epoch=-1, best_val_loss=np.inf,
                           seed=seed, dtype="float64")
    return nn.TrainedModel(spec=spec, params=params.data.copy(), meta=meta)


def feature_input(seed=1):
    x = np.random.default_rng(seed).normal(size=16)
    x[14] = L_L
    x[15] = L_U
    return x


def window_input(seed=2):
    x = np.random.default_rng(seed).normal(size=(6, 17))
    x[:, 14] = L_L
    x[:, 15] = L_U
    x[:, 16] = 0.02
    x[0, 16] = 0.0
    return x


class TestMcPredict:
    def test_requires_dropout(self):
        model = make_model(dropout=0.0)
        with pytest.raises(NoStochasticityError):
            inf.mc_predict(model, feature_input(), 10)

    def test_requires_two_passes(self):
        with pytest.raises(ShapeError):
            inf.mc_predict(make_model(), feature_input(), 1)

    def test_tiny_dropout_collapses_spread(self):
        model = make_model(dropout=1e-9)
        dist = inf.mc_predict(model, feature_input(), 50, master_seed=3)
        assert dist.n_samples == 50
        assert np.max(dist.std_elbow) < 1e-6
        assert np.max(dist.std_wrist) < 1e-6

    def test_deterministic_per_master_seed(self):
        model = make_model()
        a = inf.mc_predict(model, feature_input(), 32, master_seed=9, frame_key=(4,))
        b = inf.mc_predict(model, feature_input(), 32, master_seed=9, frame_key=(4,))
        np.testing.assert_array_equal(a.elbow_samples, b.elbow_samples)
        np.testing.assert_array_equal(a.wrist_samples, b.wrist_samples)
        c = inf.mc_predict(model, feature_input(), 32, master_seed=10, frame_key=(4,))
        assert not np.array_equal(a.wrist_samples, c.wrist_samples)

    def test_means_stable_in_pass_count(self):
        model = make_model()
        x = feature_input()
        small = inf.mc_predict(model, x, 150, master_seed=5)
        large = inf.mc_predict(model, x, 1500, master_seed=5)
        for axis in range(3):
            bound = 3.0 * small.std_wrist[axis] / np.sqrt(150.0)
            assert abs(small.mean.p_w[axis] - large.mean.p_w[axis]) <= bound + 1e-12

    @pytest.mark.parametrize("codec", ["quat", "sixd", "polar"])
    def test_samples_stay_on_manifold(self, codec):
        model = make_model(codec=codec)
        dist = inf.mc_predict(model, feature_input(), 100, master_seed=7)
        r_e = np.linalg.norm(dist.elbow_samples, axis=1)
        r_w = np.linalg.norm(dist.wrist_samples - dist.elbow_samples, axis=1)
        assert np.max(np.abs(r_e - L_U)) < 1e-9
        assert np.max(np.abs(r_w - L_L)) < 1e-9

    def test_recurrent_model(self):
        model = make_model(arch="recurrent", codec="sixd", width=8)
        dist = inf.mc_predict(model, window_input(), 40, master_seed=1)
        assert dist.n_samples == 40
        assert np.max(np.abs(np.linalg.norm(dist.elbow_samples, axis=1) - L_U)) < 1e-9

    def test_mean_matches_distribution_stats(self):
        model = make_model()
        dist = inf.mc_predict(model, feature_input(), 64, master_seed=2)
        mean_e, _ = inf.distribution_stats(dist.elbow_samples)
        np.testing.assert_array_equal(dist.mean.p_e, mean_e)


class TestDistributionStats:
    def test_identical_samples(self):
        pts = np.tile([1.0, 2.0, 3.0], (10, 1))
        mean, std = inf.distribution_stats(pts)
        np.testing.assert_array_equal(mean, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(std, 0.0)

    def test_two_samples_unbiased(self):
        pts = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        mean, std = inf.distribution_stats(pts)
        np.testing.assert_array_equal(mean, 0.0)
        assert std[0] == pytest.approx(np.sqrt(2.0))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(37, 3))
        mean, std = inf.distribution_stats(pts)
        for axis in range(3):
            mu = sum(float(v) for v in pts[:, axis]) / 37
            var = sum((float(v) - mu) ** 2 for v in pts[:, axis]) / 36
            assert mean[axis] == pytest.approx(mu, abs=1e-12)
            assert std[axis] == pytest.approx(np.sqrt(var), abs=1e-12)

    def test_needs_two_samples(self):
        with pytest.raises(ShapeError):
            inf.distribution_stats(np.zeros((1, 3)))


def cloud(rng, center, sigma, n):
    return center + sigma * rng.standard_normal((n, 3))


class TestDetectModes:
    def test_single_cloud(self):
        rng = np.random.default_rng(5)
        e = cloud(rng, [-0.1, 0.2, 0.1], 0.02, 200)
        w = cloud(rng, [-0.3, 0.1, 0.3], 0.02, 200)
        modes = inf.detect_modes(e, w)
        assert len(modes) == 1
        assert modes[0].weight == 1.0

    def test_two_separated_clouds(self):
        rng = np.random.default_rng(6)
        e1 = cloud(rng, [-0.1, 0.2, 0.1], 0.02, 100)
        w1 = cloud(rng, [-0.3, 0.1, 0.3], 0.02, 100)
        e2 = cloud(rng, [-0.1, 0.2, 0.1], 0.02, 100)
        w2 = cloud(rng, [0.0, 0.1, 0.3], 0.02, 100)  # wrist 30 cm away
        e = np.concatenate([e1, e2])
        w = np.concatenate([w1, w2])
        modes = inf.detect_modes(e, w)
        assert len(modes) == 2
        assert sum(m.weight for m in modes) == pytest.approx(1.0)
        assert abs(np.linalg.norm(modes[0].wrist - modes[1].wrist) - 0.3) < 0.02

    def test_identical_points(self):
        e = np.tile([0.1, 0.1, 0.1], (50, 1))
        w = np.tile([0.4, 0.1, 0.1], (50, 1))
        modes = inf.detect_modes(e, w)
        assert len(modes) == 1
        np.testing.assert_allclose(modes[0].elbow, [0.1, 0.1, 0.1], atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        e = np.concatenate([cloud(rng, [0, 0, 0], 0.02, 60), cloud(rng, [0.5, 0, 0], 0.02, 40)])
        w = np.concatenate([cloud(rng, [0, 0, 0.3], 0.02, 60), cloud(rng, [0.5, 0, 0.3], 0.02, 40)])
        base = inf.detect_modes(e, w)
        perm = rng.permutation(100)
        shuffled = inf.detect_modes(e[perm], w[perm])
        assert len(base) == len(shuffled) == 2
        for a, b in zip(base, shuffled):
            np.testing.assert_allclose(a.elbow, b.elbow, atol=1e-12)
            assert a.count == b.count

    def test_translation_invariance(self):
        rng = np.random.default_rng(8)
        e = np.concatenate([cloud(rng, [0, 0, 0], 0.02, 50), cloud(rng, [0.4, 0, 0], 0.02, 50)])
        w = e + [0.0, 0.0, 0.25]
        base = inf.detect_modes(e, w)
        offset = np.array([1.5, -2.0, 0.75])
        moved = inf.detect_modes(e + offset, w + offset)
        assert len(base) == len(moved)
        for a, b in zip(base, moved):
            np.testing.assert_allclose(a.elbow + offset, b.elbow, atol=1e-9)

    def test_thresholds_respected(self):
        rng = np.random.default_rng(9)
        # two clouds only 5 cm apart: below the distance gate
        e = np.concatenate([cloud(rng, [0, 0, 0], 0.005, 50), cloud(rng, [0.05, 0, 0], 0.005, 50)])
        w = e + [0.0, 0.0, 0.25]
        assert len(inf.detect_modes(e, w)) == 1
        relaxed = inf.ModeConfig(min_distance_m=0.02)
        assert len(inf.detect_modes(e, w, relaxed)) == 2


class TestSelectMode:
    @staticmethod
    def mode(elbow, wrist, weight, count=10):
        return inf.PoseMode(elbow=np.asarray(elbow, dtype=float),
                            wrist=np.asarray(wrist, dtype=float),
                            weight=weight, count=count)

    def test_single_mode(self):
        m = self.mode([0.1, 0, 0], [0.4, 0, 0], 1.0)
        pose = inf.select_mode((m,), None)
        np.testing.assert_array_equal(pose.p_w, m.wrist)

    def test_previous_pose_wins(self):
        a = self.mode([0.1, 0, 0], [0.4, 0, 0], 0.5)
        b = self.mode([0.1, 0, 0], [-0.4, 0, 0], 0.5)
        prev = ArmPose(p_e=np.array([0.1, 0, 0]), p_w=np.array([0.4, 0, 0]))
        pose = inf.select_mode((a, b), inf.SelectionContext(previous=prev))
        np.testing.assert_array_equal(pose.p_w, a.wrist)

    def test_cost_tie_prefers_heavier_mode(self):
        a = self.mode([0.1, 0, 0], [0.0, 0.0, 0.3], 0.3)
        b = self.mode([0.1, 0, 0], [0.0, 0.0, -0.3], 0.7)
        prev = ArmPose(p_e=np.zeros(3), p_w=np.zeros(3))  # equidistant
        pose = inf.select_mode((a, b), inf.SelectionContext(previous=prev))
        np.testing.assert_array_equal(pose.p_w, b.wrist)

    def test_full_tie_prefers_lower_index(self):
        a = self.mode([0.1, 0, 0], [0.0, 0.0, 0.3], 0.5)
        b = self.mode([0.1, 0, 0], [0.0, 0.0, -0.3], 0.5)
        prev = ArmPose(p_e=np.zeros(3), p_w=np.zeros(3))
        pose = inf.select_mode((a, b), inf.SelectionContext(previous=prev))
        np.testing.assert_array_equal(pose.p_w, a.wrist)

    def test_returns_a_given_centroid(self):
        rng = np.random.default_rng(10)
        modes = tuple(
            self.mode(rng.normal(size=3), rng.normal(size=3), w)
            for w in (0.25, 0.75)
        )
        prev = ArmPose(p_e=rng.normal(size=3), p_w=rng.normal(size=3))
        pose = inf.select_mode(modes, inf.SelectionContext(previous=prev))
        assert any(np.array_equal(pose.p_w, m.wrist) for m in modes)

    def test_weighted_elbow_cost(self):
        a = self.mode([0.2, 0, 0], [0.4, 0, 0], 0.5)
        b = self.mode([-0.2, 0, 0], [0.4, 0, 0], 0.5)
        prev = ArmPose(p_e=np.array([-0.2, 0, 0]), p_w=np.array([0.4, 0, 0]))
        ctx = inf.SelectionContext(previous=prev, wrist_weight=0.0, elbow_weight=1.0)
        pose = inf.select_mode((a, b), ctx)
        np.testing.assert_array_equal(pose.p_e, b.elbow)


class TestSerialization:
    def test_json_fields(self):
        model = make_model()
        dist = inf.mc_predict(model, feature_input(), 16, master_seed=0)
        doc = json.loads(dist.to_json())
        assert doc["n"] == 16
        assert len(doc["elbow_mean"]) == 3
        assert len(doc["modes"]) >= 1
        assert "elbow_samples" not in doc
        with_samples = json.loads(dist.to_json(include_samples=True))
        assert len(with_samples["wrist_samples"]) == 16
