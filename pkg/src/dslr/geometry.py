"""Rigid-body poses with unit quaternions stored as (x, y, z, w)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-9


def quat_multiply(a, b):
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_conjugate(q):
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_matrix(q):
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Shepperd's method; returns a quaternion with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[3] < 0 else q


def quat_from_yaw(yaw):
    return np.array([0.0, 0.0, np.sin(yaw / 2.0), np.cos(yaw / 2.0)])


def quat_angle(q):
    """Geodesic rotation angle in radians, in [0, pi]."""
    q = np.asarray(q, dtype=float)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., :3], axis=-1), np.abs(q[..., 3]))


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
            raise ValueError(f"rotation quaternion is not unit length (|q|={np.linalg.norm(q)!r})")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @classmethod
    def from_xyz_yaw(cls, x, y, z=0.0, yaw=0.0, timestamp=0.0):
        return cls(quat_from_yaw(yaw), np.array([x, y, z], dtype=float), timestamp)

    @property
    def matrix(self):
        return quat_to_matrix(self.rotation)

    def as_tuple(self):
        """(tx, ty, tz, qx, qy, qz, qw)"""
        return tuple(float(v) for v in (*self.translation, *self.rotation))


def _normalized(q):
    return q / np.linalg.norm(q)


def compose(a: Pose, b: Pose) -> Pose:
    """a ∘ b: apply b first, then a."""
    q = _normalized(quat_multiply(a.rotation, b.rotation))
    t = a.matrix @ b.translation + a.translation
    return Pose(q, t, b.timestamp)


def inverse(p: Pose) -> Pose:
    q = quat_conjugate(p.rotation)
    return Pose(q, -(quat_to_matrix(q) @ p.translation), p.timestamp)


def relative(p: Pose, q: Pose) -> Pose:
    """Pose of q expressed in the frame of p, i.e. inverse(p) ∘ q."""
    return compose(inverse(p), q)


def translation_distance(p: Pose) -> float:
    return float(np.linalg.norm(p.translation))


def rotation_angle_deg(p: Pose) -> float:
    return float(np.degrees(quat_angle(p.rotation)))


def transform_points(xyz, pose: Pose):
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    return xyz @ pose.matrix.T + pose.translation
