"""Deterministic 2.5-D LiDAR simulator producing paired static/dynamic runs.

The world is made of vertical wall segments (static) and axis-aligned boxes
that follow piecewise-linear trajectories (dynamic). One ray is cast through
every bin center of the sensor; the nearest hit within ``max_range`` wins.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import atomic_write_text, write_cloud, write_rimg
from .geometry import Pose
from .scan import DYNAMIC, STATIC, PointCloud, SensorSpec, project
from .traj import Trajectory, write_tum

_EPS = 1e-9


@dataclass(frozen=True)
class Wall:
    start: tuple
    end: tuple
    z_min: float = -20.0
    z_max: float = 20.0

    def __post_init__(self):
        if np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]) <= 0:
            raise ValueError("wall segment is degenerate")
        if not self.z_min < self.z_max:
            raise ValueError("wall needs z_min < z_max")


@dataclass(frozen=True)
class MovingBox:
    half_extent: tuple
    z_min: float
    z_max: float
    waypoints: tuple  # ((t, x, y), ...) with increasing t

    def __post_init__(self):
        wp = np.asarray(self.waypoints, float).reshape(-1, 3)
        if len(wp) == 0 or np.any(np.diff(wp[:, 0]) <= 0):
            raise ValueError("waypoint times must be non-empty and increasing")
        if min(self.half_extent) <= 0 or not self.z_min < self.z_max:
            raise ValueError("box extents must be positive")

    @property
    def time_span(self):
        return self.waypoints[0][0], self.waypoints[-1][0]

    def center(self, t):
        wp = np.asarray(self.waypoints, float).reshape(-1, 3)
        return float(np.interp(t, wp[:, 0], wp[:, 1])), float(np.interp(t, wp[:, 0], wp[:, 2]))

    def bounds(self, t):
        cx, cy = self.center(t)
        hx, hy = self.half_extent
        return np.array([cx - hx, cy - hy, self.z_min]), np.array([cx + hx, cy + hy, self.z_max])


@dataclass
class WorldSpec:
    walls: list = field(default_factory=list)
    boxes: list = field(default_factory=list)
    seed: int = 0

    def static_only(self):
        return WorldSpec(list(self.walls), [], self.seed)

    def check_time_span(self, t0, t1):
        for k, box in enumerate(self.boxes):
            a, b = box.time_span
            if t0 < a or t1 > b:
                raise ValueError(f"box {k} trajectory covers [{a}, {b}] but the run spans [{t0}, {t1}]")


@dataclass
class Run:
    kind: str  # "static" or "dynamic"
    poses: list
    scans: list
    masks: list | None = None
    paths: list | None = None

    def __post_init__(self):
        ts = np.array([p.timestamp for p in self.poses])
        if np.any(np.diff(ts) <= 0):
            raise ValueError("run timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)


def _wall_hits(origin, dirs, walls, max_range):
    best = np.full(len(dirs), np.inf)
    if not walls:
        return best
    ox, oy, oz = origin
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    for w in walls:
        ex, ey = w.end[0] - w.start[0], w.end[1] - w.start[1]
        px, py = w.start[0] - ox, w.start[1] - oy
        denom = dx * ey - dy * ex
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (px * ey - py * ex) / denom
            u = (px * dy - py * dx) / denom
        z = oz + s * dz
        ok = (np.abs(denom) > _EPS) & (s > _EPS) & (u >= 0) & (u <= 1) \
            & (z >= w.z_min) & (z <= w.z_max) & (s <= max_range)
        best = np.where(ok & (s < best), s, best)
    return best


def _box_hits(origin, dirs, lo, hi, max_range):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    # rays parallel to a slab: inside it -> unbounded, outside -> miss
    par = dirs == 0
    inside = (origin >= lo) & (origin <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    hit = (t_near <= t_far) & (t_near > _EPS) & (t_near <= max_range)
    return np.where(hit, t_near, np.inf)


def cast_rays(world: WorldSpec, origin, directions, t, max_range, include_dynamic=True):
    """Distances along unit ``directions`` from ``origin`` (world frame).

    Returns (distance with inf for no return, is_dynamic flag).
    """
    origin = np.asarray(origin, float).reshape(3)
    dirs = np.asarray(directions, float).reshape(-1, 3)
    best = _wall_hits(origin, dirs, world.walls, max_range)
    dynamic = np.zeros(len(dirs), bool)
    if include_dynamic:
        for box in world.boxes:
            lo, hi = box.bounds(t)
            s = _box_hits(origin, dirs, lo, hi, max_range)
            closer = s <= best
            dynamic = np.where(closer & np.isfinite(s), True, dynamic)
            best = np.where(closer, s, best)
    return best, dynamic & np.isfinite(best)


def raycast_scan(world: WorldSpec, pose: Pose, spec: SensorSpec, t=None,
                 include_dynamic=True) -> PointCloud:
    """Simulated scan in the sensor frame, one ray per bin center."""
    t = pose.timestamp if t is None else t
    local = spec.ray_directions().reshape(-1, 3)
    dist, dyn = cast_rays(world, pose.translation, local @ pose.matrix.T, t,
                          spec.max_range, include_dynamic)
    hit = np.isfinite(dist)
    xyz = local[hit] * dist[hit, None]
    labels = np.where(dyn[hit], DYNAMIC, STATIC)
    return PointCloud(xyz, labels, frame_id=f"{t:.6f}")


def generate_paired_runs(world: WorldSpec, path, spec: SensorSpec, out_dir=None):
    """Scan the same path twice: without and with the dynamic boxes.

    With ``out_dir`` set, writes ``static/`` and ``dynamic/`` subdirectories
    holding NNNNNN.rimg range images (the dynamic ones carry the ground-truth
    mask plane), NNNNNN.bin point clouds and a TUM ``trajectory.txt``.
    """
    path = list(path)
    if not path:
        raise ValueError("path must contain at least one pose")
    ts = [p.timestamp for p in path]
    world.check_time_span(min(ts), max(ts))

    runs = {}
    for kind, with_dyn in (("static", False), ("dynamic", True)):
        scans, masks, paths = [], [], []
        for i, pose in enumerate(path):
            cloud = raycast_scan(world, pose, spec, include_dynamic=with_dyn)
            ri, mask = project(cloud, spec, return_mask=True)
            mask = np.zeros(spec.shape, bool) if mask is None else mask
            scans.append(ri)
            masks.append(mask)
            if out_dir is not None:
                d = Path(out_dir) / kind
                write_rimg(d / f"{i:06d}.rimg", ri, mask if with_dyn else None)
                write_cloud(d / f"{i:06d}.bin", cloud)
                paths.append(str(d / f"{i:06d}.rimg"))
        if out_dir is not None:
            write_tum(Path(out_dir) / kind / "trajectory.txt", Trajectory.from_poses(path),
                      header="timestamp tx ty tz qx qy qz qw")
        runs[kind] = Run(kind, path, scans, masks if with_dyn else None, paths or None)
    return runs["static"], runs["dynamic"]


# -- procedural worlds for the desk-scale experiments

def _ellipse_waypoints(a, b, cx, cy, omega, phase, t0, t1, dt=0.25):
    t = np.arange(t0, t1 + dt, dt)
    ang = phase + omega * t
    return tuple((float(tt), float(cx + a * np.cos(g)), float(cy + b * np.sin(g))) for tt, g in zip(t, ang))


def make_world(seed=0, n_boxes=4, room=(36.0, 24.0), duration=60.0, n_pillars=4):
    """A walled room with a few pillars and cars circling on elliptical lanes.

    Coordinates are relative to the sensor height: the floor sits at z = -1.7.
    """
    rng = np.random.default_rng(seed)
    hx, hy = room[0] / 2, room[1] / 2
    corners = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
    walls = [Wall(corners[k], corners[(k + 1) % 4]) for k in range(4)]
    # alcoves break the symmetry so scans along the loop are distinguishable
    for k in range(3):
        x0 = float(rng.uniform(-hx + 3, hx - 6))
        depth = float(rng.uniform(1.5, 3.0))
        side = hy if k % 2 == 0 else -hy
        inward = -np.sign(side) * depth
        walls.append(Wall((x0, side), (x0, side + inward)))
        walls.append(Wall((x0, side + inward), (x0 + 3.0, side + inward)))
    for _ in range(n_pillars):
        cx = float(rng.uniform(-hx + 2.5, hx - 2.5))
        cy = float(rng.choice([-1, 1]) * rng.uniform(hy - 3.5, hy - 2.0))
        s = float(rng.uniform(0.4, 0.9))
        pts = [(cx - s, cy - s), (cx + s, cy - s), (cx + s, cy + s), (cx - s, cy + s)]
        walls += [Wall(pts[k], pts[(k + 1) % 4]) for k in range(4)]

    boxes = []
    lanes = [(14.5, 9.0), (7.0, 2.6)]
    for k in range(n_boxes):
        a, b = lanes[k % len(lanes)]
        omega = float(rng.uniform(0.08, 0.2)) * (1 if k % 2 else -1)
        phase = float(rng.uniform(0, 2 * np.pi))
        wp = _ellipse_waypoints(a, b, 0.0, 0.0, omega, phase, 0.0, duration)
        boxes.append(MovingBox((1.1, 1.1), -1.7, -0.2, wp))
    return WorldSpec(walls, boxes, seed)


def loop_path(n_poses=300, a=11.0, b=5.8, dt=0.1, laps=1.0, t0=0.0):
    """Poses along an ellipse, heading tangent to the loop."""
    poses = []
    for i in range(n_poses):
        g = 2 * np.pi * laps * i / n_poses
        x, y = a * np.cos(g), b * np.sin(g)
        yaw = np.arctan2(b * np.cos(g), -a * np.sin(g))
        poses.append(Pose.from_xyz_yaw(x, y, 0.0, yaw, t0 + i * dt))
    return poses


# -- plain-text world config

def _floats(s):
    return [float(v) for v in s.replace(",", " ").split()]


def _nums(*vals):
    return " ".join(repr(float(v)) for v in vals)


def world_to_text(world: WorldSpec) -> str:
    cp = configparser.ConfigParser()
    cp["world"] = {"seed": str(world.seed)}
    for k, w in enumerate(world.walls):
        cp[f"wall {k}"] = {"start": _nums(*w.start), "end": _nums(*w.end), "z": _nums(w.z_min, w.z_max)}
    for k, b in enumerate(world.boxes):
        cp[f"box {k}"] = {"half_extent": _nums(*b.half_extent),
                          "z": _nums(b.z_min, b.z_max),
                          "waypoints": "; ".join(_nums(*wp) for wp in b.waypoints)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def world_from_text(text: str) -> WorldSpec:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    walls, boxes, seed = [], [], 0
    for name in cp.sections():
        sec = cp[name]
        kind = name.split()[0]
        if kind == "world":
            seed = sec.getint("seed", 0)
        elif kind == "wall":
            z = _floats(sec["z"]) if "z" in sec else [-20.0, 20.0]
            walls.append(Wall(tuple(_floats(sec["start"])), tuple(_floats(sec["end"])), *z))
        elif kind == "box":
            wp = tuple(tuple(_floats(item)) for item in sec["waypoints"].split(";") if item.strip())
            z = _floats(sec["z"])
            boxes.append(MovingBox(tuple(_floats(sec["half_extent"])), z[0], z[1], wp))
        else:
            raise ValueError(f"unknown world section [{name}]")
    return WorldSpec(walls, boxes, seed)


def save_world(path, world):
    atomic_write_text(path, world_to_text(world))


def load_world(path):
    return world_from_text(Path(path).read_text(encoding="utf-8"))
