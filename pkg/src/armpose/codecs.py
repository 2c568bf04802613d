"""Prediction-target codecs: four interchangeable output representations.

* ``xyz``   elbow and wrist positions directly (6 values, unconstrained)
* ``polar`` two direction angles for the elbow and two for the wrist
            relative to the elbow; radii come from the known bone lengths
            (4 values)
* ``quat``  relative upper and lower arm rotations as quaternions, which are
            normalized before forward kinematics (8 values)
* ``sixd``  the same rotations as stacked first-two matrix columns, decoded
            by renormalization/orthogonalization (12 values)

The three rotation-based codecs put every decoded pose exactly on the arm
manifold (elbow on the l_u sphere, wrist at l_l from the elbow) no matter
what the network emitted; the xyz codec does not.
"""

from dataclasses import dataclass

import numpy as np

from .errors import RotationError, ShapeError
from .rotations import (
    BONE_AXIS,
    forward_kinematics,
    matrix_to_quat,
    polar_decode,
    polar_encode,
    quat_to_matrix,
    rotate_vec,
    sixd_decode,
    sixd_encode,
)

CODECS = ("polar", "xyz", "sixd", "quat")

_CODEC_DIMS = {"polar": 4, "xyz": 6, "sixd": 12, "quat": 8}


def codec_dim(codec):
    try:
        return _CODEC_DIMS[codec]
    except KeyError:
        raise ShapeError(f"unknown codec {codec!r}, expected one of {CODECS}") from None


@dataclass(frozen=True, eq=False)
class ArmPose:
    """Shoulder-relative elbow/wrist positions, plus the arm rotations when
    the producing codec carries them."""

    p_e: np.ndarray
    p_w: np.ndarray
    q_u: np.ndarray | None = None
    q_l: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class PoseArrays:
    """Batch of decoded poses as stacked arrays."""

    p_e: np.ndarray  # (n, 3)
    p_w: np.ndarray  # (n, 3)
    q_u: np.ndarray | None = None  # (n, 4)
    q_l: np.ndarray | None = None  # (n, 4)

    def __len__(self):
        return self.p_e.shape[0]

    def pose(self, i):
        return ArmPose(
            p_e=self.p_e[i],
            p_w=self.p_w[i],
            q_u=None if self.q_u is None else self.q_u[i],
            q_l=None if self.q_l is None else self.q_l[i],
        )

    def poses(self):
        return [self.pose(i) for i in range(len(self))]


def encode_targets(codec, q_u_r, q_l_r, l_u, l_l):
    """Batched target encoding from relative arm rotations; returns (n, d).

    Quaternion targets are canonicalized to w >= 0 so that training data is
    deterministic under the double cover.
    """
    q_u_r = np.atleast_2d(np.asarray(q_u_r, dtype=float))
    q_l_r = np.atleast_2d(np.asarray(q_l_r, dtype=float))
    if codec == "quat":
        qu = np.where(q_u_r[:, :1] < 0.0, -q_u_r, q_u_r)
        ql = np.where(q_l_r[:, :1] < 0.0, -q_l_r, q_l_r)
        return np.concatenate([qu, ql], axis=1)
    if codec == "sixd":
        return np.concatenate(
            [sixd_encode(quat_to_matrix(q_u_r)), sixd_encode(quat_to_matrix(q_l_r))],
            axis=1,
        )
    if codec == "polar":
        e_dir = rotate_vec(q_u_r, BONE_AXIS)
        w_dir = rotate_vec(q_l_r, BONE_AXIS)
        return np.concatenate([polar_encode(e_dir), polar_encode(w_dir)], axis=1)
    if codec == "xyz":
        p_e, p_w = forward_kinematics(q_u_r, q_l_r, l_u, l_l)
        return np.concatenate([np.atleast_2d(p_e), np.atleast_2d(p_w)], axis=1)
    codec_dim(codec)  # raises


def encode_target(truth, codec):
    """Spec surface for a single ground-truth frame (hip-relative)."""
    from .calibration import relative_arm_rotations

    q_l_r, q_u_r = relative_arm_rotations(truth.q_h, truth.q_l, truth.q_u)
    return encode_targets(codec, q_u_r, q_l_r, truth.l_u, truth.l_l)[0]


def decode_batch(codec, raw, l_u, l_l):
    """Batched decode of raw network outputs to poses; returns PoseArrays.

    Bone lengths may be scalars or per-row (n,) arrays.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    d = codec_dim(codec)
    if raw.shape[1] != d:
        raise ShapeError(f"codec {codec!r} expects {d} outputs, got {raw.shape[1]}")
    l_u = np.asarray(l_u, dtype=float)
    l_l = np.asarray(l_l, dtype=float)
    if codec == "xyz":
        return PoseArrays(p_e=raw[:, 0:3].copy(), p_w=raw[:, 3:6].copy())
    if codec == "polar":
        e_dir = polar_decode(raw[:, 0:2])
        w_dir = polar_decode(raw[:, 2:4])
        p_e = e_dir * l_u[..., None]
        return PoseArrays(p_e=p_e, p_w=p_e + w_dir * l_l[..., None])
    if codec == "quat":
        qu = _normalize_rows(raw[:, 0:4])
        ql = _normalize_rows(raw[:, 4:8])
        p_e, p_w = forward_kinematics(qu, ql, l_u, l_l)
        return PoseArrays(p_e=p_e, p_w=p_w, q_u=qu, q_l=ql)
    # sixd
    R_u = sixd_decode(raw[:, 0:6])
    R_l = sixd_decode(raw[:, 6:12])
    # BONE_AXIS is -x, so rotating it picks out the negated first column
    p_e = -R_u[:, :, 0] * l_u[..., None]
    p_w = p_e - R_l[:, :, 0] * l_l[..., None]
    return PoseArrays(p_e=p_e, p_w=p_w, q_u=matrix_to_quat(R_u), q_l=matrix_to_quat(R_l))


def decode_prediction(raw, l_u, l_l, codec):
    """Decode a single raw output vector to an ArmPose."""
    return decode_batch(codec, np.asarray(raw, dtype=float)[None, :], l_u, l_l).pose(0)


def _normalize_rows(q):
    n = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(n < 1e-8):
        raise RotationError("cannot decode (near-)zero quaternion output")
    return q / n
