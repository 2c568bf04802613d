"""Monte-Carlo dropout inference: pose distributions, uncertainty and modes.

Repeating a prediction with dropout active yields a cloud of poses for one
input. The cloud's standard deviation measures uncertainty; a deterministic
two-centroid clustering flags bimodal clouds (ambiguous sensor readings) so
a caller can pick the mode closest to its previous pose instead of the
(possibly mid-air) mean. Pass i of a prediction draws its dropout masks from
an RNG keyed by (master seed, frame key, i), so distributions are
reproducible and independent of execution order.
"""

import json
from dataclasses import dataclass

import numpy as np

from .codecs import ArmPose, decode_batch
from .errors import NoStochasticityError, ShapeError
from .network import dropout_mask_shapes
from .rotations import quat_mean

MODE_WCSS_RATIO = 4.0
MODE_MIN_DISTANCE_M = 0.10
_KMEANS_ITERS = 20


@dataclass(frozen=True)
class ModeConfig:
    """Thresholds for declaring a sample cloud bimodal."""

    wcss_ratio: float = MODE_WCSS_RATIO
    min_distance_m: float = MODE_MIN_DISTANCE_M


@dataclass(frozen=True, eq=False)
class PoseMode:
    """One cluster of a pose distribution."""

    elbow: np.ndarray
    wrist: np.ndarray
    weight: float
    count: int


@dataclass(frozen=True, eq=False)
class PoseDistribution:
    """N stochastic pose samples with their mean, spread and detected modes."""

    elbow_samples: np.ndarray  # (n, 3)
    wrist_samples: np.ndarray  # (n, 3)
    mean: ArmPose
    std_elbow: np.ndarray  # (3,)
    std_wrist: np.ndarray  # (3,)
    modes: tuple  # 1 or 2 PoseMode entries, weights summing to 1

    @property
    def n_samples(self):
        return self.elbow_samples.shape[0]

    @property
    def samples(self):
        return [
            ArmPose(p_e=self.elbow_samples[i], p_w=self.wrist_samples[i])
            for i in range(self.n_samples)
        ]

    def to_dict(self, include_samples=False):
        d = {
            "n": int(self.n_samples),
            "elbow_mean": [float(v) for v in self.mean.p_e],
            "wrist_mean": [float(v) for v in self.mean.p_w],
            "elbow_std": [float(v) for v in self.std_elbow],
            "wrist_std": [float(v) for v in self.std_wrist],
            "modes": [
                {
                    "elbow": [float(v) for v in m.elbow],
                    "wrist": [float(v) for v in m.wrist],
                    "weight": float(m.weight),
                }
                for m in self.modes
            ],
        }
        if include_samples:
            d["elbow_samples"] = self.elbow_samples.tolist()
            d["wrist_samples"] = self.wrist_samples.tolist()
        return d

    def to_json(self, include_samples=False):
        return json.dumps(self.to_dict(include_samples=include_samples))


def mc_masks(spec, n_passes, master_seed, frame_key=(), steps=None, dtype=np.float64):
    """Stacked dropout masks for n_passes stochastic passes.

    Pass i's masks are row i of frame-keyed batch draws, so they are a pure
    function of (master seed, frame key, i): reproducible and independent of
    the order passes execute in. Batching the draw keeps the 150-pass /
    real-time case off the Python floor.
    """
    shapes = dropout_mask_shapes(spec, steps)
    p = spec.dropout
    rng = np.random.default_rng((master_seed, *frame_key))
    dtype = np.dtype(dtype)
    draw_dtype = np.float32 if dtype == np.float32 else np.float64
    scale = dtype.type(1.0 / (1.0 - p))
    masks = []
    for s in shapes:
        m = (rng.random((n_passes,) + s, dtype=draw_dtype) >= p).astype(dtype)
        m *= scale  # keep-probability scaling of the surviving units
        masks.append(m)
    return masks


def mc_predict(model, x, n_passes, master_seed=0, frame_key=(), l_u=None, l_l=None,
               mode_config=ModeConfig(), dtype=None):
    """Run n_passes dropout-active forward passes and summarize the cloud.

    `x` is one feature vector (feedforward) or one (steps, input_dim) window
    (recurrent). Bone lengths default to the ones carried in the input's
    feature slots.
    """
    spec = model.spec
    if spec.dropout <= 0.0:
        raise NoStochasticityError("model has dropout rate 0; MC prediction is meaningless")
    if n_passes < 2:
        raise ShapeError("a distribution needs at least 2 passes")
    if spec.codec is None:
        raise ShapeError("mc_predict needs a model trained against a codec")
    net = model.network(dtype)
    x = np.asarray(x, dtype=net.params.dtype)
    steps = None
    if spec.arch == "recurrent":
        if x.ndim != 2:
            raise ShapeError("recurrent mc_predict expects one (steps, input_dim) window")
        steps = x.shape[0]
    if l_u is None or l_l is None:
        l_l_slot, l_u_slot = _lengths_from_input(x)
        l_u = l_u_slot if l_u is None else l_u
        l_l = l_l_slot if l_l is None else l_l
    masks = mc_masks(spec, n_passes, master_seed, frame_key, steps=steps,
                     dtype=net.params.dtype)
    raw = np.asarray(net.forward_mc(x, masks), dtype=np.float64)
    poses = decode_batch(spec.codec, raw, l_u, l_l)
    return summarize(poses, mode_config)


def _lengths_from_input(x):
    # feature layout ends with [l_l, l_u]; windows carry a trailing dt column
    if x.ndim == 1:
        return float(x[-2]), float(x[-1])
    return float(x[-1, -3]), float(x[-1, -2])


def summarize(poses, mode_config=ModeConfig()):
    """Statistics and modes of a decoded pose batch."""
    mean_e, std_e = distribution_stats(poses.p_e)
    mean_w, std_w = distribution_stats(poses.p_w)
    mean_pose = ArmPose(
        p_e=mean_e,
        p_w=mean_w,
        q_u=None if poses.q_u is None else quat_mean(poses.q_u),
        q_l=None if poses.q_l is None else quat_mean(poses.q_l),
    )
    modes = detect_modes(poses.p_e, poses.p_w, mode_config)
    return PoseDistribution(
        elbow_samples=poses.p_e,
        wrist_samples=poses.p_w,
        mean=mean_pose,
        std_elbow=std_e,
        std_wrist=std_w,
        modes=modes,
    )


def distribution_stats(points):
    """Per-axis arithmetic mean and unbiased (n-1) standard deviation."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ShapeError("distribution statistics need at least 2 samples")
    return points.mean(axis=0), points.std(axis=0, ddof=1)


def detect_modes(elbow, wrist, config=ModeConfig()):
    """One or two clusters over the concatenated (elbow, wrist) coordinates.

    Two modes are declared when splitting halves the clustering cost by at
    least `wcss_ratio` AND the centroids sit at least `min_distance_m` apart.
    Deterministic: farthest-pair seeding, fixed iteration count, no RNG.
    """
    pts = np.concatenate(
        [np.asarray(elbow, dtype=float), np.asarray(wrist, dtype=float)], axis=1
    )
    center = pts.mean(axis=0)
    wcss1 = float(np.sum((pts - center) ** 2))
    single = (_mode_from(pts, np.ones(len(pts), dtype=bool)),)
    if wcss1 <= 1e-24:  # all samples identical
        return single
    c0, c1, assign = _two_means(pts)
    if not assign.any() or assign.all():
        return single
    wcss2 = float(np.sum((pts[~assign] - c0) ** 2) + np.sum((pts[assign] - c1) ** 2))
    separation = float(np.linalg.norm(c1 - c0))
    ratio = np.inf if wcss2 <= 1e-24 else wcss1 / wcss2
    if ratio >= config.wcss_ratio and separation >= config.min_distance_m:
        modes = (_mode_from(pts, ~assign), _mode_from(pts, assign))
        # deterministic ordering: heavier mode first, then lower elbow-x
        return tuple(sorted(modes, key=lambda m: (-m.weight, *m.elbow, *m.wrist)))
    return single


def _mode_from(pts, mask):
    sel = pts[mask]
    centroid = sel.mean(axis=0)
    return PoseMode(
        elbow=centroid[:3],
        wrist=centroid[3:],
        weight=sel.shape[0] / pts.shape[0],
        count=int(sel.shape[0]),
    )


def _two_means(pts):
    """2-means with farthest-pair initialization, fixed 20 iterations max."""
    sq = np.sum(pts * pts, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    i, j = np.unravel_index(np.argmax(d2), d2.shape)
    c0, c1 = pts[i].copy(), pts[j].copy()
    assign = np.zeros(len(pts), dtype=bool)
    for _ in range(_KMEANS_ITERS):
        dist0 = np.sum((pts - c0) ** 2, axis=1)
        dist1 = np.sum((pts - c1) ** 2, axis=1)
        new_assign = dist1 < dist0
        if new_assign.all() or not new_assign.any():
            break
        if (new_assign == assign).all():
            assign = new_assign
            break
        assign = new_assign
        c0 = pts[~assign].mean(axis=0)
        c1 = pts[assign].mean(axis=0)
    return c0, c1, assign


@dataclass(frozen=True, eq=False)
class SelectionContext:
    """Previous pose plus cost weights for picking among modes."""

    previous: ArmPose
    wrist_weight: float = 1.0
    elbow_weight: float = 0.0


def select_mode(modes, context):
    """Centroid of the mode with the lowest weighted distance cost.

    Ties go to the heavier mode, then to the lower index. With a single mode
    its centroid is returned unconditionally.
    """
    if len(modes) == 0:
        raise ShapeError("select_mode needs at least one mode")
    if len(modes) == 1 or context is None:
        return _pose_of(modes[0])
    costs = []
    for idx, m in enumerate(modes):
        cost = context.wrist_weight * float(
            np.linalg.norm(m.wrist - context.previous.p_w)
        ) + context.elbow_weight * float(np.linalg.norm(m.elbow - context.previous.p_e))
        costs.append((cost, -m.weight, idx))
    costs.sort()
    return _pose_of(modes[costs[0][2]])


def _pose_of(mode):
    return ArmPose(p_e=mode.elbow.copy(), p_w=mode.wrist.copy())
