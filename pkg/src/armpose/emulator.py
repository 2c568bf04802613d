"""Synthetic smartwatch sessions: scripted calibration poses, smooth random
arm motion and physically derived sensor channels.

A session timeline is: watch held at chest height for the pressure window,
arm stretched forward for the rotation window, then free motion through
random reachable targets. Joint orientations are interpolated between
keyframes with slerp under a smootherstep ease, which keeps the calibration
holds exactly constant and the motion twice differentiable at segment
boundaries. Sensor channels are derived from the trajectory itself:

* watch orientation   theta = q_h * q_l_rel * mount  (watch on the lower arm)
* gravity             world up rotated into the watch frame
* linear acceleration finite-difference second derivative of the wrist path,
                      expressed in the watch frame
* angular velocity    finite-difference body rate of the watch orientation
* pressure            session base minus 0.12 hPa per meter of wrist height

Gaussian channel noise is configurable per channel and defaults to small
consumer-sensor magnitudes.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .frames import GroundTruthFrame, SensorFrame
from .rotations import (
    BONE_AXIS,
    forward_kinematics,
    quat_from_axis_angle,
    quat_from_rotvec,
    quat_geodesic,
    quat_inv,
    quat_mul,
    quat_normalize,
    quat_to_rotvec,
    rotate_vec,
    slerp,
)

GRAVITY_M_S2 = 9.81
PRESSURE_GRADIENT_HPA_PER_M = -0.12
HINGE_AXIS = np.array([0.0, 0.0, 1.0])  # elbow hinge in the upper-arm frame

# scripted poses: watch at the chest, then arm stretched forward
CHEST_Q_U = quat_from_axis_angle([0.0, 0.0, 1.0], np.pi / 2)   # upper arm down
CHEST_Q_L = quat_from_axis_angle([0.0, 1.0, 0.0], np.pi / 2)   # forearm forward
FORWARD_Q = quat_from_axis_angle([0.0, 1.0, 0.0], np.pi / 2)   # whole arm forward


@dataclass(frozen=True)
class EmuConfig:
    """Everything that defines one synthetic session."""

    duration_s: float = 30.0
    sensor_rate_hz: float = 50.0
    truth_rate_hz: float = 120.0
    cal_window_s: float = 3.0
    seed: int = 0
    base_pressure_hpa: float = 1013.25
    pressure_offset_hpa: float | None = None  # None: drawn uniform +-15 hPa
    l_u: float = 0.30
    l_l: float = 0.25
    mount: tuple = (1.0, 0.0, 0.0, 0.0)  # watch frame vs lower-arm frame
    sigma_theta_rad: float = 0.005
    sigma_lacc: float = 0.05
    sigma_grav: float = 0.02
    sigma_gyro: float = 0.01
    sigma_pres_hpa: float = 0.01
    keyframe_gap_s: tuple = (0.6, 1.4)
    max_elbow_y: float = 0.4
    max_sweep_rad: float = 2.0

    def __post_init__(self):
        if self.duration_s <= 2.0 * self.cal_window_s + 0.5:
            raise ValueError("session must be longer than the two calibration windows")
        if self.sensor_rate_hz <= 0 or self.truth_rate_hz <= 0:
            raise ValueError("sampling rates must be positive")
        if self.l_u <= 0 or self.l_l <= 0:
            raise ValueError("arm lengths must be positive")

    def noiseless(self):
        return replace(
            self, sigma_theta_rad=0.0, sigma_lacc=0.0, sigma_grav=0.0,
            sigma_gyro=0.0, sigma_pres_hpa=0.0,
        )

    def to_json(self):
        d = self.__dict__.copy()
        d["mount"] = list(self.mount)
        d["keyframe_gap_s"] = list(self.keyframe_gap_s)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if "mount" in d:
            d["mount"] = tuple(d["mount"])
        if "keyframe_gap_s" in d:
            d["keyframe_gap_s"] = tuple(d["keyframe_gap_s"])
        return cls(**d)


def pressure_at(base_hpa, wrist_y_m):
    """Barometric model: linear gradient around the session base pressure."""
    return base_hpa + PRESSURE_GRADIENT_HPA_PER_M * wrist_y_m


def synth_session(cfg, seed=None):
    """Generate one session; returns (sensor frames, ground-truth frames)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    heading = rng.uniform(-np.pi, np.pi)
    q_h = quat_from_axis_angle([0.0, 1.0, 0.0], heading)
    offset = cfg.pressure_offset_hpa
    if offset is None:
        offset = rng.uniform(-15.0, 15.0)
    base = cfg.base_pressure_hpa + offset
    mount = quat_normalize(np.asarray(cfg.mount, dtype=float))

    key_t, key_qu, key_ql = _build_keyframes(cfg, rng)

    duration_ms = cfg.duration_s * 1000.0
    t_s = np.arange(int(np.floor(duration_ms * cfg.sensor_rate_hz / 1000.0))) * (
        1000.0 / cfg.sensor_rate_hz
    )
    t_g = np.arange(int(np.floor(duration_ms * cfg.truth_rate_hz / 1000.0))) * (
        1000.0 / cfg.truth_rate_hz
    )

    qu_s = _eval_track(key_t, key_qu, t_s / 1000.0)
    ql_s = _eval_track(key_t, key_ql, t_s / 1000.0)
    qu_g = _eval_track(key_t, key_qu, t_g / 1000.0)
    ql_g = _eval_track(key_t, key_ql, t_g / 1000.0)

    # watch orientation and world-frame wrist path at the sensor rate
    theta_true = quat_mul(q_h, quat_mul(ql_s, mount))
    _, p_w_body = forward_kinematics(qu_s, ql_s, cfg.l_u, cfg.l_l)
    p_w_world = rotate_vec(q_h, p_w_body)

    h = 1.0 / cfg.sensor_rate_hz
    a_world = _second_derivative(p_w_world, h)
    theta_inv = quat_inv(theta_true)
    a_watch = rotate_vec(theta_inv, a_world)
    grav_watch = rotate_vec(theta_inv, np.array([0.0, GRAVITY_M_S2, 0.0]))
    gyro = _body_rates(theta_true, h)

    n = len(t_s)
    theta_noise = quat_from_rotvec(rng.normal(0.0, 1.0, (n, 3)) * cfg.sigma_theta_rad)
    theta_out = quat_mul(theta_true, theta_noise)
    lacc_out = a_watch + rng.normal(0.0, 1.0, (n, 3)) * cfg.sigma_lacc
    grav_out = grav_watch + rng.normal(0.0, 1.0, (n, 3)) * cfg.sigma_grav
    gyro_out = gyro + rng.normal(0.0, 1.0, (n, 3)) * cfg.sigma_gyro
    pres_out = pressure_at(base, p_w_world[:, 1]) + rng.normal(0.0, 1.0, n) * cfg.sigma_pres_hpa

    sensors = [
        SensorFrame(
            t=float(t_s[i]),
            theta=theta_out[i],
            lacc=lacc_out[i],
            grav=grav_out[i],
            gyro=gyro_out[i],
            pres=float(pres_out[i]),
        )
        for i in range(n)
    ]
    ql_world = quat_mul(q_h, ql_g)
    qu_world = quat_mul(q_h, qu_g)
    truths = [
        GroundTruthFrame(
            t=float(t_g[j]),
            q_h=q_h,
            q_l=ql_world[j],
            q_u=qu_world[j],
            l_l=cfg.l_l,
            l_u=cfg.l_u,
        )
        for j in range(len(t_g))
    ]
    return sensors, truths


def _build_keyframes(cfg, rng):
    """Keyframe times/orientations: chest hold, forward hold, random motion."""
    cal = cfg.cal_window_s
    times = [0.0, cal - 0.5, cal - 0.05, 2.0 * cal - 0.05]
    qus = [CHEST_Q_U, CHEST_Q_U, FORWARD_Q, FORWARD_Q]
    qls = [CHEST_Q_L, CHEST_Q_L, FORWARD_Q, FORWARD_Q]

    t = times[-1]
    q_u, q_l = qus[-1], qls[-1]
    while t < cfg.duration_s + 0.1:
        t += rng.uniform(*cfg.keyframe_gap_s)
        q_u, q_l = _sample_reachable_target(rng, q_u, q_l, cfg)
        times.append(t)
        qus.append(q_u)
        qls.append(q_l)

    # sign-align consecutive keys so interpolation takes the short arc
    qus = _align_chain(qus)
    qls = _align_chain(qls)
    return np.asarray(times), np.stack(qus), np.stack(qls)


def _align_chain(quats):
    out = [np.asarray(quats[0], dtype=float)]
    for q in quats[1:]:
        q = np.asarray(q, dtype=float)
        out.append(-q if float(np.dot(out[-1], q)) < 0.0 else q)
    return out


def _sample_reachable_target(rng, prev_qu, prev_ql, cfg):
    """Random arm configuration: bounded elbow elevation, bounded elbow
    flexion relative to the upper arm, bounded rolls, limited sweep from the
    previous keyframe."""
    candidate = None
    for _ in range(50):
        direction = _random_direction(rng, cfg.max_elbow_y)
        u_roll = rng.uniform(-np.pi / 3, np.pi / 3)
        flexion = rng.uniform(np.deg2rad(10.0), np.deg2rad(150.0))
        l_roll = rng.uniform(-np.deg2rad(80.0), np.deg2rad(80.0))
        q_u = quat_mul(_quat_between(BONE_AXIS, direction),
                       quat_from_axis_angle(BONE_AXIS, u_roll))
        q_l = quat_mul(q_u, quat_mul(quat_from_axis_angle(HINGE_AXIS, -flexion),
                                     quat_from_axis_angle(BONE_AXIS, l_roll)))
        candidate = (q_u, q_l)
        if (quat_geodesic(q_u, prev_qu) <= cfg.max_sweep_rad
                and quat_geodesic(q_l, prev_ql) <= cfg.max_sweep_rad):
            return candidate
    return candidate


def _random_direction(rng, max_y):
    while True:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        if n < 1e-9:
            continue
        v = v / n
        if v[1] <= max_y:
            return v


def _quat_between(a, b):
    """Minimal rotation carrying unit vector a onto unit vector b."""
    w = 1.0 + float(np.dot(a, b))
    if w < 1e-9:
        # antiparallel: a half turn about any axis perpendicular to a
        perp = np.cross(a, [0.0, 1.0, 0.0])
        if np.linalg.norm(perp) < 1e-9:
            perp = np.cross(a, [0.0, 0.0, 1.0])
        return quat_from_axis_angle(perp, np.pi)
    return quat_normalize(np.concatenate([[w], np.cross(a, b)]))


def _smootherstep(u):
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def _eval_track(key_t, key_q, ts):
    """Evaluate the keyframed orientation track at times ts (seconds)."""
    ts = np.asarray(ts, dtype=float)
    out = np.empty((len(ts), 4))
    seg = np.clip(np.searchsorted(key_t, ts, side="right") - 1, 0, len(key_t) - 2)
    for s in np.unique(seg):
        mask = seg == s
        span = key_t[s + 1] - key_t[s]
        u = np.clip((ts[mask] - key_t[s]) / span, 0.0, 1.0)
        out[mask] = slerp(key_q[s], key_q[s + 1], _smootherstep(u))
    return out


def _second_derivative(p, h):
    """Central second differences on a uniform grid, one-sided at the ends."""
    a = np.empty_like(p)
    a[1:-1] = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / (h * h)
    a[0] = (2.0 * p[0] - 5.0 * p[1] + 4.0 * p[2] - p[3]) / (h * h)
    a[-1] = (2.0 * p[-1] - 5.0 * p[-2] + 4.0 * p[-3] - p[-4]) / (h * h)
    return a


def _body_rates(q, h):
    """Watch-frame angular velocity from the orientation track.

    Central differences over the relative rotation q_i^-1 q_{i+1}; one-sided
    at the ends. Exact for constant rates over the window.
    """
    w = np.empty((len(q), 3))
    w[1:-1] = quat_to_rotvec(quat_mul(quat_inv(q[:-2]), q[2:])) / (2.0 * h)
    w[0] = quat_to_rotvec(quat_mul(quat_inv(q[0]), q[1])) / h
    w[-1] = quat_to_rotvec(quat_mul(quat_inv(q[-2]), q[-1])) / h
    return w
