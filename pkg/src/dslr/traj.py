"""Trajectory I/O (TUM text format) and SLAM error metrics: ATE, RPE, drift."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import atomic_write_text
from .geometry import Pose, compose, inverse, matrix_to_quat, quat_angle


class AssociationError(ValueError):
    pass


@dataclass
class Trajectory:
    timestamps: np.ndarray
    translations: np.ndarray
    rotations: np.ndarray  # (N, 4) quaternions, x y z w

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        self.translations = np.asarray(self.translations, dtype=float).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(-1, 4)
        n = len(self.timestamps)
        if len(self.translations) != n or len(self.rotations) != n:
            raise ValueError("timestamps, translations and rotations differ in length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.any(np.abs(np.linalg.norm(self.rotations, axis=1) - 1.0) > 1e-9):
            raise ValueError("rotations must be unit quaternions")

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def from_poses(cls, poses):
        poses = list(poses)
        return cls(np.array([p.timestamp for p in poses]),
                   np.array([p.translation for p in poses]).reshape(-1, 3),
                   np.array([p.rotation for p in poses]).reshape(-1, 4))

    def pose(self, i) -> Pose:
        return Pose(self.rotations[i], self.translations[i], self.timestamps[i])

    def poses(self):
        return [self.pose(i) for i in range(len(self))]

    def transformed(self, T: Pose) -> "Trajectory":
        """Apply one rigid motion to every pose (left multiplication)."""
        return Trajectory.from_poses(compose(T, p) for p in self.poses())


# -- TUM format: "timestamp tx ty tz qx qy qz qw" per line, '#' comments

def parse_tum(text: str, source="<text>") -> Trajectory:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 8:
            raise ValueError(f"{source}:{lineno}: expected 8 fields, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    arr = np.array(rows, dtype=float).reshape(-1, 8)
    return Trajectory(arr[:, 0], arr[:, 1:4], arr[:, 4:8])


def format_tum(traj: Trajectory, header=None) -> str:
    # repr() gives the shortest string that parses back to the same double
    lines = [f"# {header}"] if header else []
    for t, p, q in zip(traj.timestamps, traj.translations, traj.rotations):
        lines.append(" ".join(repr(float(v)) for v in (t, *p, *q)))
    return "\n".join(lines) + "\n"


def read_tum(path) -> Trajectory:
    return parse_tum(Path(path).read_text(encoding="utf-8"), source=str(path))


def write_tum(path, traj: Trajectory, header=None):
    atomic_write_text(path, format_tum(traj, header))


# -- association and metrics

def associate(est: Trajectory, gt: Trajectory, max_dt: float = 0.02):
    """Greedy nearest-timestamp matching; every pose is used at most once.

    Returns an (K, 2) integer array of (est index, gt index) sorted by est index.
    """
    if len(est) == 0 or len(gt) == 0:
        raise AssociationError("cannot associate an empty trajectory")
    dt = np.abs(est.timestamps[:, None] - gt.timestamps[None, :])
    i, j = np.nonzero(dt <= max_dt)
    order = np.lexsort((j, i, dt[i, j]))
    used_e, used_g, pairs = set(), set(), []
    for k in order:
        a, b = int(i[k]), int(j[k])
        if a in used_e or b in used_g:
            continue
        used_e.add(a)
        used_g.add(b)
        pairs.append((a, b))
    if not pairs:
        raise AssociationError(f"no timestamps within {max_dt} s of each other")
    return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def align_rigid(src, dst):
    """Least-squares R, t with R @ src_i + t ≈ dst_i (Kabsch, no scale)."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(3)
    if np.linalg.det(Vt.T @ U.T) < 0:
        S[2, 2] = -1.0
    R = Vt.T @ S @ U.T
    return R, mu_d - R @ mu_s


def _residual_norms(est, gt, pairs, align):
    e = est.translations[pairs[:, 0]]
    g = gt.translations[pairs[:, 1]]
    if align:
        R, t = align_rigid(e, g)
        e = e @ R.T + t
    return np.linalg.norm(e - g, axis=1)


def ate(est: Trajectory, gt: Trajectory, align: bool = True, max_dt: float = 0.02) -> float:
    """RMSE of translational residuals, optionally after SE(3) alignment of est onto gt."""
    pairs = associate(est, gt, max_dt)
    if align and len(pairs) < 3:
        raise ValueError("alignment needs at least 3 associated poses")
    res = _residual_norms(est, gt, pairs, align)
    return float(np.sqrt(np.mean(res ** 2)))


def drift(est: Trajectory, gt: Trajectory, max_dt: float = 0.02) -> float:
    """Mean unaligned translational error over associated poses."""
    pairs = associate(est, gt, max_dt)
    return float(np.mean(_residual_norms(est, gt, pairs, align=False)))


def rpe(est: Trajectory, gt: Trajectory, delta: int = 1, max_dt: float = 0.02):
    """Relative pose error over a fixed frame offset.

    Returns (translational RMSE in meters, mean rotation error in degrees).
    """
    if delta < 1:
        raise ValueError("delta must be >= 1")
    pairs = associate(est, gt, max_dt)
    if len(pairs) < delta + 1:
        raise ValueError(f"need at least {delta + 1} associated poses for delta={delta}")
    E = [est.pose(int(i)) for i in pairs[:, 0]]
    G = [gt.pose(int(j)) for j in pairs[:, 1]]
    trans, rot = [], []
    for k in range(len(pairs) - delta):
        rel_e = compose(inverse(E[k]), E[k + delta])
        rel_g = compose(inverse(G[k]), G[k + delta])
        err = compose(inverse(rel_g), rel_e)
        trans.append(np.linalg.norm(err.translation))
        rot.append(quat_angle(err.rotation))
    trans = np.asarray(trans)
    return float(np.sqrt(np.mean(trans ** 2))), float(np.degrees(np.mean(rot)))


def rigid_pose(R, t) -> Pose:
    return Pose(matrix_to_quat(R), t)

