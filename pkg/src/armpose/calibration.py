"""Two-step session calibration and its statistical validation.

Step one captures mean atmospheric pressure with the watch held at chest
height; step two captures the mean watch orientation with the arm stretched
forward. All later sensor readings are expressed relative to the captured
state: relative pressure proxies wrist elevation, relative rotation removes
the unknown body heading.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, UndefinedCorrelationError
from .rotations import quat_inv, quat_mean, quat_mul, quat_normalize

PLAUSIBLE_PRESSURE_HPA = (300.0, 1100.0)


@dataclass(frozen=True, eq=False)
class CalibrationState:
    """Chest-height pressure and forward-facing rotation for one session."""

    rho_c: float
    theta_c: np.ndarray
    captured_at: float  # ms

    def __post_init__(self):
        lo, hi = PLAUSIBLE_PRESSURE_HPA
        if not lo <= self.rho_c <= hi:
            raise CalibrationError(
                f"chest pressure {self.rho_c} hPa outside plausible range [{lo}, {hi}]"
            )
        object.__setattr__(self, "theta_c", quat_normalize(self.theta_c))

    def to_dict(self):
        return {
            "rho_c": float(self.rho_c),
            "theta_c": [float(c) for c in self.theta_c],
            "captured_at": float(self.captured_at),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            rho_c=float(d["rho_c"]),
            theta_c=np.asarray(d["theta_c"], dtype=float),
            captured_at=float(d["captured_at"]),
        )


def mean_pressure(samples):
    """Arithmetic mean of a pressure calibration window."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise CalibrationError("pressure calibration window is empty")
    return float(np.mean(samples))


def mean_rotation(samples):
    """Average orientation of a rotation calibration window.

    Samples are sign-aligned to the first before the component-wise mean so
    that the quaternion double cover cannot cancel them out.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise CalibrationError("rotation calibration window is empty")
    return quat_mean(samples.reshape(-1, 4))


def relative_pressure(rho, state):
    """rho minus the chest-height reference."""
    return rho - state.rho_c


def relative_rotation(theta, state):
    """Watch orientation expressed relative to the forward-facing capture."""
    return quat_normalize(quat_mul(quat_inv(state.theta_c), theta))


def relative_arm_rotations(q_h, q_l, q_u):
    """Ground-truth arm rotations expressed relative to the hip heading."""
    h_inv = quat_inv(q_h)
    return quat_normalize(quat_mul(h_inv, q_l)), quat_normalize(quat_mul(h_inv, q_u))


def kendall_tau(xs, ys):
    """Tie-corrected (tau-b) Kendall rank correlation.

    Discordant pairs are counted with a merge-sort inversion count, so the
    whole computation is O(n log n) and handles the full recorded dataset.
    Raises UndefinedCorrelationError when either argument is entirely tied.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise ValueError("kendall_tau expects two equal-length 1-D arrays, n >= 2")
    n = xs.size
    order = np.lexsort((ys, xs))
    x = xs[order]
    y = ys[order]

    n0 = n * (n - 1) // 2
    n1 = _tie_pair_count(x)
    n2 = _tie_pair_count(np.sort(ys))
    n3 = _joint_tie_pair_count(x, y)
    if n0 == n1 or n0 == n2:
        raise UndefinedCorrelationError("correlation undefined: an input is entirely tied")

    discordant = _count_inversions(y)
    numerator = n0 - n1 - n2 + n3 - 2 * discordant
    return float(numerator / np.sqrt(float(n0 - n1) * float(n0 - n2)))


def _tie_pair_count(sorted_values):
    """Sum t*(t-1)/2 over runs of equal values in a sorted array."""
    boundaries = np.flatnonzero(np.diff(sorted_values) != 0.0)
    starts = np.concatenate([[0], boundaries + 1])
    ends = np.concatenate([boundaries + 1, [sorted_values.size]])
    runs = ends - starts
    return int(np.sum(runs * (runs - 1) // 2))


def _joint_tie_pair_count(x, y):
    """Tie pairs over (x, y) jointly; expects rows sorted lexicographically."""
    same = (np.diff(x) == 0.0) & (np.diff(y) == 0.0)
    boundaries = np.flatnonzero(~same)
    starts = np.concatenate([[0], boundaries + 1])
    ends = np.concatenate([boundaries + 1, [x.size]])
    runs = ends - starts
    return int(np.sum(runs * (runs - 1) // 2))


def _count_inversions(a):
    """Number of pairs i < j with a[i] > a[j] (strict), by merge counting."""
    a = np.asarray(a)
    if a.size < 2:
        return 0
    mid = a.size // 2
    left, cl = _sorted_with_inversions(a[:mid])
    right, cr = _sorted_with_inversions(a[mid:])
    cross = _cross_inversions(left, right)
    return cl + cr + cross


def _sorted_with_inversions(a):
    if a.size < 2:
        return a, 0
    mid = a.size // 2
    left, cl = _sorted_with_inversions(a[:mid])
    right, cr = _sorted_with_inversions(a[mid:])
    cross = _cross_inversions(left, right)
    merged = np.sort(np.concatenate([left, right]), kind="mergesort")
    return merged, cl + cr + cross


def _cross_inversions(left_sorted, right):
    # for each right element, count strictly greater elements on the left
    pos = np.searchsorted(left_sorted, right, side="right")
    return int(np.sum(left_sorted.size - pos))
