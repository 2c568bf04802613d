"""Observation types, stream merging, feature assembly and CSV persistence.

One watch observation holds 14 sensor scalars ``[theta(4), lacc(3), grav(3),
gyro(3), pres]``; one ground-truth observation holds 14 mocap scalars
``[q_h(4), q_l(4), q_u(4), l_l, l_u]``. Model inputs are 16-value feature
vectors in the frozen order

    [rel_pressure, rel_rotation(4), lacc(3), gyro(3), grav(3), l_l, l_u]

(note gyro before grav, unlike the raw sensor layout). Recurrent models
consume windows of 6 consecutive feature vectors, each extended by the time
delta in seconds to its predecessor (0 for the first step).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .calibration import relative_pressure, relative_rotation
from .errors import CsvFormatError, MergeOrderError

FEATURE_DIM = 16
SEQUENCE_LENGTH = 6
SEQUENCE_STEP_DIM = FEATURE_DIM + 1  # trailing slot is dt_step in seconds
PAIRING_TOLERANCE_MS = 25.0

FEATURE_COLUMNS = (
    "rel_pres",
    "rel_theta_w", "rel_theta_x", "rel_theta_y", "rel_theta_z",
    "lacc_x", "lacc_y", "lacc_z",
    "gyro_x", "gyro_y", "gyro_z",
    "grav_x", "grav_y", "grav_z",
    "l_l", "l_u",
)

SENSOR_COLUMNS = (
    "t",
    "theta_w", "theta_x", "theta_y", "theta_z",
    "lacc_x", "lacc_y", "lacc_z",
    "grav_x", "grav_y", "grav_z",
    "gyro_x", "gyro_y", "gyro_z",
    "pres",
)

TRUTH_COLUMNS = (
    "t",
    "qh_w", "qh_x", "qh_y", "qh_z",
    "ql_w", "ql_x", "ql_y", "ql_z",
    "qu_w", "qu_x", "qu_y", "qu_z",
    "l_l", "l_u",
)

PAIRED_COLUMNS = SENSOR_COLUMNS + tuple("truth_" + c for c in TRUTH_COLUMNS) + ("dt_pair",)


@dataclass(frozen=True, eq=False)
class SensorFrame:
    """One timestamped watch observation (14 sensor scalars)."""

    t: float  # ms
    theta: np.ndarray  # rotation vector sensor, quaternion (4,)
    lacc: np.ndarray  # linear acceleration m/s^2 (3,)
    grav: np.ndarray  # gravity m/s^2 (3,)
    gyro: np.ndarray  # angular velocity rad/s (3,)
    pres: float  # hPa

    def values(self):
        """The 14 sensor scalars in wire order [theta, lacc, grav, gyro, pres]."""
        return np.concatenate([self.theta, self.lacc, self.grav, self.gyro, [self.pres]])

    @classmethod
    def from_values(cls, t, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (14,):
            raise ValueError("sensor frame needs exactly 14 values")
        return cls(
            t=float(t),
            theta=values[0:4].copy(),
            lacc=values[4:7].copy(),
            grav=values[7:10].copy(),
            gyro=values[10:13].copy(),
            pres=float(values[13]),
        )


@dataclass(frozen=True, eq=False)
class GroundTruthFrame:
    """One timestamped mocap observation: rotations plus arm lengths."""

    t: float  # ms
    q_h: np.ndarray
    q_l: np.ndarray
    q_u: np.ndarray
    l_l: float  # m
    l_u: float  # m


@dataclass(frozen=True, eq=False)
class PairedSample:
    """A sensor frame matched with the ground-truth frame nearest in time."""

    sensor: SensorFrame
    truth: GroundTruthFrame
    dt_pair: float  # ms, absolute pairing gap


def merge_nearest(sensors, truths, tol_ms=PAIRING_TOLERANCE_MS):
    """Pair every sensor frame with the nearest-in-time truth frame.

    Both streams must be sorted by timestamp. Ties break toward the earlier
    truth frame, truth frames may be reused, and sensor frames whose nearest
    truth is farther than `tol_ms` are dropped.
    """
    _check_sorted(sensors, "sensor")
    _check_sorted(truths, "truth")
    if not truths:
        return []
    pairs = []
    j = 0
    for s in sensors:
        while j + 1 < len(truths) and abs(truths[j + 1].t - s.t) < abs(truths[j].t - s.t):
            j += 1
        gap = abs(truths[j].t - s.t)
        if gap <= tol_ms:
            pairs.append(PairedSample(sensor=s, truth=truths[j], dt_pair=gap))
    return pairs


def _check_sorted(frames, name):
    for a, b in zip(frames, frames[1:]):
        if b.t < a.t:
            raise MergeOrderError(f"{name} stream is not sorted by timestamp")


def pack_features(sensor, state, l_l, l_u):
    """Assemble the 16-value model input from one sensor frame."""
    theta_r = relative_rotation(sensor.theta, state)
    return np.concatenate(
        [
            [relative_pressure(sensor.pres, state)],
            theta_r,
            sensor.lacc,
            sensor.gyro,
            sensor.grav,
            [l_l, l_u],
        ]
    )


def build_features(pair, state):
    """Assemble the model input for one paired sample (lengths from truth)."""
    return pack_features(pair.sensor, state, pair.truth.l_l, pair.truth.l_u)


def features_matrix(pairs, state):
    """Stacked build_features over many pairs; returns (n, 16)."""
    if not pairs:
        return np.zeros((0, FEATURE_DIM))
    return np.stack([build_features(p, state) for p in pairs])


def unpack_features(vec):
    """Inverse of build_features: named fields from one feature vector."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (FEATURE_DIM,):
        raise ValueError(f"feature vector must have {FEATURE_DIM} slots")
    return {
        "rel_pres": float(vec[0]),
        "rel_theta": vec[1:5].copy(),
        "lacc": vec[5:8].copy(),
        "gyro": vec[8:11].copy(),
        "grav": vec[11:14].copy(),
        "l_l": float(vec[14]),
        "l_u": float(vec[15]),
    }


def sequence_stack(features, times_ms):
    """Sliding windows of 6 consecutive feature vectors, stride 1.

    Each step carries its feature vector plus the time delta in seconds from
    the previous step (0 for the first step of a window). Fewer than 6 input
    frames produce an empty result. Returns (n - 5, 6, 17).
    """
    features = np.asarray(features, dtype=float)
    times_ms = np.asarray(times_ms, dtype=float)
    n = features.shape[0]
    if times_ms.shape[0] != n:
        raise ValueError("features and timestamps must have equal length")
    if n < SEQUENCE_LENGTH:
        return np.zeros((0, SEQUENCE_LENGTH, SEQUENCE_STEP_DIM))
    dt_s = np.diff(times_ms, prepend=times_ms[0]) / 1000.0
    steps = np.concatenate([features, dt_s[:, None]], axis=1)
    windows = np.lib.stride_tricks.sliding_window_view(steps, SEQUENCE_LENGTH, axis=0)
    windows = np.swapaxes(windows, 1, 2).copy()
    # the first step of every window measures time from outside the window
    windows[:, 0, FEATURE_DIM] = 0.0
    return windows


def write_csv(path, header, rows):
    """Write float rows at full round-trip precision."""
    header = list(header)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise CsvFormatError(
                    f"row has {len(row)} values, header has {len(header)}"
                )
            writer.writerow([repr(float(v)) for v in row])


def read_csv(path, expected_header=None):
    """Read a float CSV written by write_csv; returns (header, (n, k) array)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("file is empty", line=1) from None
        if expected_header is not None and header != list(expected_header):
            raise CsvFormatError(
                f"unexpected header {header!r}, wanted {list(expected_header)!r}", line=1
            )
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(
                    f"expected {len(header)} columns, found {len(row)}", line=line_no
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise CsvFormatError(str(exc), line=line_no) from None
    data = np.asarray(rows, dtype=float)
    if data.size == 0:
        data = np.zeros((0, len(header)))
    return header, data


def write_sensor_csv(path, frames):
    write_csv(path, SENSOR_COLUMNS, ([f.t, *f.values()] for f in frames))


def read_sensor_csv(path):
    _, data = read_csv(path, SENSOR_COLUMNS)
    return [SensorFrame.from_values(row[0], row[1:]) for row in data]


def write_truth_csv(path, frames):
    write_csv(
        path,
        TRUTH_COLUMNS,
        ([f.t, *f.q_h, *f.q_l, *f.q_u, f.l_l, f.l_u] for f in frames),
    )


def read_truth_csv(path):
    _, data = read_csv(path, TRUTH_COLUMNS)
    return [
        GroundTruthFrame(
            t=row[0],
            q_h=np.asarray(row[1:5]),
            q_l=np.asarray(row[5:9]),
            q_u=np.asarray(row[9:13]),
            l_l=row[13],
            l_u=row[14],
        )
        for row in data
    ]


def write_paired_csv(path, pairs):
    def rows():
        for p in pairs:
            yield [
                p.sensor.t, *p.sensor.values(),
                p.truth.t, *p.truth.q_h, *p.truth.q_l, *p.truth.q_u,
                p.truth.l_l, p.truth.l_u,
                p.dt_pair,
            ]

    write_csv(path, PAIRED_COLUMNS, rows())


def read_paired_csv(path):
    _, data = read_csv(path, PAIRED_COLUMNS)
    pairs = []
    for row in data:
        sensor = SensorFrame.from_values(row[0], row[1:15])
        truth = GroundTruthFrame(
            t=row[15],
            q_h=np.asarray(row[16:20]),
            q_l=np.asarray(row[20:24]),
            q_u=np.asarray(row[24:28]),
            l_l=row[28],
            l_u=row[29],
        )
        pairs.append(PairedSample(sensor=sensor, truth=truth, dt_pair=row[30]))
    return pairs


def calibrate_from_frames(frames, window_s=3.0):
    """Capture a CalibrationState from a session's opening sensor frames.

    The first `window_s` seconds form the chest-height pressure window, the
    next `window_s` seconds the forward-facing rotation window.
    """
    from .calibration import CalibrationError, CalibrationState, mean_pressure, mean_rotation

    w_ms = window_s * 1000.0
    pressures = [f.pres for f in frames if f.t < w_ms]
    thetas = [f.theta for f in frames if w_ms <= f.t < 2.0 * w_ms]
    if not pressures:
        raise CalibrationError("no frames in the pressure calibration window")
    if not thetas:
        raise CalibrationError("no frames in the rotation calibration window")
    return CalibrationState(
        rho_c=mean_pressure(pressures),
        theta_c=mean_rotation(np.stack(thetas)),
        captured_at=2.0 * w_ms,
    )
