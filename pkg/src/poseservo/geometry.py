"""SE(3)/SO(3) rigid transforms and Lie-group operations.

Poses are stored as a unit quaternion plus a translation vector. Twists are
6-vectors ordered (linear, angular). The log map raises :class:`AngleNearPi`
for rotations at or near pi radians instead of picking an arbitrary branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AngleNearPi

# Below this rotation angle exp/log/V switch to 2nd-order Taylor series.
SMALL_ANGLE = 1e-7

# log is refused within this margin of pi.
PI_MARGIN = 1e-6


def _hat(w: np.ndarray) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product, components ordered (x, y, z, w)."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector by the quaternion (q v q*)."""
    u = q[:3]
    w = q[3]
    # Rodrigues form avoids building the rotation matrix.
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    half = 0.5 * angle
    return np.concatenate([axis * math.sin(half), [math.cos(half)]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; stable for all rotation angles."""
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        return quat_normalize(
            np.array(
                [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s]
            )
        )
    i = int(np.argmax(np.diag(m)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = math.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
    q = np.empty(4)
    q[i] = 0.25 * s
    q[j] = (m[j, i] + m[i, j]) / s
    q[k] = (m[k, i] + m[i, k]) / s
    q[3] = (m[k, j] - m[j, k]) / s
    return quat_normalize(q)


@dataclass
class Pose:
    """Rigid transform: rotation as unit quaternion (x, y, z, w), translation in meters."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = quat_normalize(np.asarray(self.rotation, dtype=float))
        self.translation = np.asarray(self.translation, dtype=float)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(quat_from_axis_angle(np.asarray(axis, float), angle), np.asarray(translation, float))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        return Pose(quat_from_matrix(m[:3, :3]), m[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, p: np.ndarray) -> np.ndarray:
        return quat_rotate(self.rotation, p) + self.translation

    def copy(self) -> "Pose":
        return Pose(self.rotation.copy(), self.translation.copy())


@dataclass
class Twist:
    """Element of se(3): linear part in meters, angular part in radians."""

    linear: np.ndarray
    angular: np.ndarray

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_array(xi: np.ndarray) -> "Twist":
        xi = np.asarray(xi, dtype=float)
        return Twist(xi[:3].copy(), xi[3:6].copy())

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


def compose(a: Pose, b: Pose) -> Pose:
    q = quat_normalize(quat_multiply(a.rotation, b.rotation))
    return Pose(q, a.translation + quat_rotate(a.rotation, b.translation))


def inverse(t: Pose) -> Pose:
    qc = quat_conjugate(t.rotation)
    return Pose(qc, -quat_rotate(qc, t.translation))


def _rotation_angle(q: np.ndarray) -> float:
    # Angle in [0, pi]; sign of w folded into the axis.
    return 2.0 * math.atan2(np.linalg.norm(q[:3]), abs(q[3]))


def _v_matrix(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    omega = _hat(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * omega + omega @ omega / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        + (1.0 - math.cos(theta)) / t2 * omega
        + (theta - math.sin(theta)) / (t2 * theta) * omega @ omega
    )


def _v_matrix_inv(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    omega = _hat(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * omega + omega @ omega / 12.0
    t2 = theta * theta
    coef = (1.0 / t2) - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) - 0.5 * omega + coef * omega @ omega


def exp(xi: Twist) -> Pose:
    """Closed-form SE(3) exponential. Total on finite input."""
    w = np.asarray(xi.angular, dtype=float)
    v = np.asarray(xi.linear, dtype=float)
    theta = np.linalg.norm(w)
    if theta < SMALL_ANGLE:
        # 2nd-order series for the quaternion; V handled by its own series.
        half = 0.5 * w
        q = quat_normalize(np.concatenate([half, [1.0 - 0.125 * theta * theta]]))
    else:
        q = quat_from_axis_angle(w / theta, theta)
    return Pose(q, _v_matrix(w) @ v)


def log(t: Pose) -> Twist:
    """SE(3) log map. Raises AngleNearPi for rotation angle >= pi - 1e-6."""
    q = t.rotation if t.rotation[3] >= 0 else -t.rotation
    theta = _rotation_angle(q)
    if theta >= math.pi - PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta:.9f} too close to pi for log")
    n = np.linalg.norm(q[:3])
    if theta < SMALL_ANGLE:
        w = 2.0 * q[:3]
    else:
        w = q[:3] / n * theta
    return Twist(_v_matrix_inv(w) @ t.translation, w)


def interpolate(a: Pose, b: Pose, alpha: float) -> Pose:
    """Geodesic A * exp(alpha * log(A^-1 B)); alpha=0 -> A, alpha=1 -> B."""
    delta = log(compose(inverse(a), b))
    return compose(a, exp(Twist(alpha * delta.linear, alpha * delta.angular)))


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation error in meters, rotation error in radians)."""
    trans = float(np.linalg.norm(a.translation - b.translation))
    rel = quat_multiply(quat_conjugate(a.rotation), b.rotation)
    return trans, _rotation_angle(rel)


def pose_to_text(t: Pose) -> str:
    """7 decimal numbers: tx ty tz qx qy qz qw."""
    vals = list(t.translation) + list(t.rotation)
    return " ".join(repr(float(v)) for v in vals)


def pose_from_text(s: str) -> Pose:
    vals = [float(tok) for tok in s.split()]
    if len(vals) != 7:
        raise ValueError(f"expected 7 numbers (tx ty tz qx qy qz qw), got {len(vals)}")
    return Pose(np.array(vals[3:]), np.array(vals[:3]))
