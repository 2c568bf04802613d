"""Rotation algebra, rotation-representation codecs and arm forward kinematics.

Conventions used throughout the package:

* Quaternions are numpy arrays ``[w, x, y, z]`` (scalar first), Hamilton
  product, acting as active rotations: ``rotate_vec(q, v) = R(q) @ v``.
* The body frame is Y up, Z forward, X along the right arm in T-pose; the
  shoulder is the origin of all positions. The tracked (left) arm points
  along ``BONE_AXIS = (-1, 0, 0)`` in T-pose.
* Rotation matrices are ``(3, 3)`` row-major with orthonormal columns and
  determinant +1.
* The 6D representation stacks the first two matrix columns
  ``[a1, a2] -> (6,)``; decoding renormalizes and orthogonalizes them and
  completes the frame with a cross product.
* Polar directions are ``(azimuth, elevation)`` with azimuth measured about
  +Y from +Z in ``(-pi, pi]`` and elevation toward +Y in ``[-pi/2, pi/2]``.

Most functions broadcast over leading axes, i.e. quaternion arguments may be
``(..., 4)``, vectors ``(..., 3)`` and so on. All operations are pure.
"""

import logging

import numpy as np

from .errors import AnthropometryError, DegenerateSixDError, RotationError

_log = logging.getLogger(__name__)

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
BONE_AXIS = np.array([-1.0, 0.0, 0.0])

# below this column norm the 6D decoder refuses to orthogonalize
SIXD_EPS = 1e-8
_ZERO_NORM_EPS = 1e-12


def quat_normalize(q):
    """Scale to unit norm; raises RotationError for (near-)zero input."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < _ZERO_NORM_EPS):
        raise RotationError("cannot normalize zero-norm quaternion")
    return q / n


def quat_mul(a, b):
    """Hamilton product a ⊗ b. Broadcasts over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_inv(q):
    """Multiplicative inverse: conjugate over squared norm."""
    q = np.asarray(q, dtype=float)
    n2 = np.sum(q * q, axis=-1, keepdims=True)
    if np.any(n2 < _ZERO_NORM_EPS**2):
        raise RotationError("cannot invert zero-norm quaternion")
    return quat_conj(q) / n2


def rotate_vec(q, v):
    """Rotate vector(s) v by quaternion(s) q.

    Non-unit quaternions are normalized internally; deviations beyond 1e-6
    are reported at debug level.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < _ZERO_NORM_EPS):
        raise RotationError("cannot rotate by zero-norm quaternion")
    if np.any(np.abs(n - 1.0) > 1e-6):
        _log.debug("rotate_vec: normalizing non-unit quaternion (max |n-1|=%g)",
                   float(np.max(np.abs(n - 1.0))))
    q = q / n
    w = q[..., :1]
    u = q[..., 1:]
    # v' = v + w*t + u x t  with  t = 2 (u x v)
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_axis_angle(axis, angle):
    """Unit quaternion for a rotation of `angle` radians about `axis`."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis, axis=-1, keepdims=True)
    if np.any(n < _ZERO_NORM_EPS):
        raise RotationError("rotation axis must be non-zero")
    axis = axis / n
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    return np.concatenate(
        [np.cos(half)[..., None], np.sin(half)[..., None] * axis], axis=-1
    )


def quat_to_rotvec(q):
    """Rotation vector (angle * unit axis, angle in [0, pi]) of a unit quaternion."""
    q = quat_normalize(q)
    # canonical sign so the encoded angle is the short way around
    q = np.where(q[..., :1] < 0.0, -q, q)
    s = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    # sin(theta/2)/theta -> 1/2 as theta -> 0
    scale = np.where(s > 1e-9, angle / np.maximum(s, 1e-300), 2.0 / np.maximum(q[..., :1], 1e-300))
    return q[..., 1:] * scale


def quat_from_rotvec(rv):
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(theta/2)/theta, series for small theta
    small = angle < 1e-9
    sinc = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.maximum(angle, 1e-300))
    return np.concatenate([np.cos(half), rv * sinc], axis=-1)


def quat_geodesic(a, b):
    """Geodesic angle in radians between two rotations (double cover folded)."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    d = np.abs(np.sum(a * b, axis=-1))
    return 2.0 * np.arccos(np.clip(d, -1.0, 1.0))


def slerp(q0, q1, u):
    """Spherical linear interpolation; `u` may be a scalar or an array."""
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    u = np.asarray(u, dtype=float)[..., None]
    d = float(np.sum(q0 * q1))
    if d < 0.0:
        q1 = -q1
        d = -d
    if d > 1.0 - 1e-10:
        out = q0 + u * (q1 - q0)
        return out / np.linalg.norm(out, axis=-1, keepdims=True)
    omega = np.arccos(np.clip(d, -1.0, 1.0))
    so = np.sin(omega)
    return (np.sin((1.0 - u) * omega) * q0 + np.sin(u * omega) * q1) / so


def quat_mean(quats):
    """Sign-aligned component-wise mean, renormalized.

    Adequate when the samples span at most a few degrees; every sample is
    flipped onto the hemisphere of the first before averaging so that q and
    -q do not cancel.
    """
    quats = np.asarray(quats, dtype=float)
    if quats.ndim != 2 or quats.shape[1] != 4 or quats.shape[0] == 0:
        raise RotationError("quat_mean expects a non-empty (n, 4) array")
    signs = np.where(quats @ quats[0] < 0.0, -1.0, 1.0)
    m = np.mean(quats * signs[:, None], axis=0)
    return quat_normalize(m)


def random_quat(rng, size=None):
    """Uniformly distributed unit quaternion(s) (Shoemake's method)."""
    shape = () if size is None else (size,)
    u1 = rng.random(shape)
    u2 = rng.random(shape) * 2.0 * np.pi
    u3 = rng.random(shape) * 2.0 * np.pi
    a = np.sqrt(1.0 - u1)
    b = np.sqrt(u1)
    return np.stack(
        [a * np.sin(u2), a * np.cos(u2), b * np.sin(u3), b * np.cos(u3)], axis=-1
    )


def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion; shape (..., 3, 3)."""
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def is_rotation_matrix(R, tol=1e-6):
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        return False
    eye = np.eye(3)
    gram_ok = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max() <= tol
    det_ok = np.all(np.abs(np.linalg.det(R) - 1.0) <= tol)
    return bool(gram_ok and det_ok)


def matrix_to_quat(R, tol=1e-6):
    """Quaternion of a rotation matrix (Shepperd's method), w >= 0 representative.

    Raises RotationError when R is not orthonormal with determinant +1
    within `tol`.
    """
    R = np.asarray(R, dtype=float)
    if not is_rotation_matrix(R, tol=tol):
        raise RotationError("matrix is not a rotation (orthonormality/det check failed)")
    batch_shape = R.shape[:-2]
    Rf = R.reshape((-1, 3, 3))
    n = Rf.shape[0]
    q = np.empty((n, 4))
    tr = Rf[:, 0, 0] + Rf[:, 1, 1] + Rf[:, 2, 2]
    # candidate squared magnitudes, largest picked per element for stability
    cands = np.stack(
        [
            1.0 + tr,
            1.0 + 2.0 * Rf[:, 0, 0] - tr,
            1.0 + 2.0 * Rf[:, 1, 1] - tr,
            1.0 + 2.0 * Rf[:, 2, 2] - tr,
        ],
        axis=-1,
    )
    case = np.argmax(cands, axis=-1)

    m = case == 0
    if np.any(m):
        s = 2.0 * np.sqrt(cands[m, 0])
        q[m, 0] = 0.25 * s
        q[m, 1] = (Rf[m, 2, 1] - Rf[m, 1, 2]) / s
        q[m, 2] = (Rf[m, 0, 2] - Rf[m, 2, 0]) / s
        q[m, 3] = (Rf[m, 1, 0] - Rf[m, 0, 1]) / s
    m = case == 1
    if np.any(m):
        s = 2.0 * np.sqrt(cands[m, 1])
        q[m, 0] = (Rf[m, 2, 1] - Rf[m, 1, 2]) / s
        q[m, 1] = 0.25 * s
        q[m, 2] = (Rf[m, 0, 1] + Rf[m, 1, 0]) / s
        q[m, 3] = (Rf[m, 0, 2] + Rf[m, 2, 0]) / s
    m = case == 2
    if np.any(m):
        s = 2.0 * np.sqrt(cands[m, 2])
        q[m, 0] = (Rf[m, 0, 2] - Rf[m, 2, 0]) / s
        q[m, 1] = (Rf[m, 0, 1] + Rf[m, 1, 0]) / s
        q[m, 2] = 0.25 * s
        q[m, 3] = (Rf[m, 1, 2] + Rf[m, 2, 1]) / s
    m = case == 3
    if np.any(m):
        s = 2.0 * np.sqrt(cands[m, 3])
        q[m, 0] = (Rf[m, 1, 0] - Rf[m, 0, 1]) / s
        q[m, 1] = (Rf[m, 0, 2] + Rf[m, 2, 0]) / s
        q[m, 2] = (Rf[m, 1, 2] + Rf[m, 2, 1]) / s
        q[m, 3] = 0.25 * s

    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    q[q[:, 0] < 0.0] *= -1.0
    return q.reshape(batch_shape + (4,))


def sixd_encode(R):
    """First two matrix columns stacked: [a1, a2] -> (..., 6)."""
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def sixd_decode(d):
    """Recover the rotation matrix from a 6D block.

    b1 = N(a1), b2 = N(a2 - (b1.a2) b1), b3 = b1 x b2; columns [b1 b2 b3].
    Raises DegenerateSixDError when a column norm falls below SIXD_EPS.
    """
    d = np.asarray(d, dtype=float)
    if d.shape[-1] != 6:
        raise DegenerateSixDError("6D block must have 6 components")
    a1 = d[..., 0:3]
    a2 = d[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= SIXD_EPS):
        raise DegenerateSixDError("first 6D column has (near-)zero norm")
    b1 = a1 / n1
    r = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(n2 <= SIXD_EPS):
        raise DegenerateSixDError("second 6D column is parallel to the first")
    b2 = r / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def polar_encode(v):
    """Direction -> (azimuth, elevation).

    Azimuth is measured about +Y from +Z in (-pi, pi], elevation toward +Y.
    Exactly at the poles the azimuth tie-break is 0.
    """
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < _ZERO_NORM_EPS):
        raise RotationError("cannot encode zero direction")
    v = v / n
    az = np.arctan2(v[..., 0], v[..., 2])
    el = np.arcsin(np.clip(v[..., 1], -1.0, 1.0))
    return np.stack([az, el], axis=-1)


def polar_decode(p):
    """(azimuth, elevation) -> unit direction."""
    p = np.asarray(p, dtype=float)
    az = p[..., 0]
    el = p[..., 1]
    ce = np.cos(el)
    return np.stack([ce * np.sin(az), np.sin(el), ce * np.cos(az)], axis=-1)


def forward_kinematics(q_u, q_l, l_u, l_l):
    """Elbow and wrist positions relative to the shoulder.

    The upper-arm rotation q_u carries the T-pose bone (BONE_AXIS * l_u) to
    the elbow; the lower-arm rotation q_l carries BONE_AXIS * l_l from the
    elbow to the wrist. By construction |p_e| = l_u and |p_w - p_e| = l_l.
    """
    l_u = np.asarray(l_u, dtype=float)
    l_l = np.asarray(l_l, dtype=float)
    if np.any(l_u <= 0.0) or np.any(l_l <= 0.0):
        raise AnthropometryError("bone lengths must be positive")
    p_e = rotate_vec(q_u, BONE_AXIS) * l_u[..., None]
    p_w = p_e + rotate_vec(q_l, BONE_AXIS) * l_l[..., None]
    return p_e, p_w
