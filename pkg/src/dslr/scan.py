"""Point clouds, range images and the conversions between them.

Conventions used throughout the package:

* azimuth bin 0 starts at +x and bins increase counter-clockwise;
* elevation row 0 holds the highest elevation;
* a point lying exactly on a bin boundary belongs to the lower-index bin;
* ranges are stored as float32, which makes ``project(deproject(ri))``
  reproduce ``ri`` bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose, transform_points

STATIC, DYNAMIC, UNLABELED = 0, 1, -1


@dataclass(frozen=True)
class SensorSpec:
    n_elevation_bins: int = 16
    n_azimuth_bins: int = 64
    elevation_fov: tuple = (-15.0, 10.0)
    max_range: float = 50.0

    def __post_init__(self):
        lo, hi = (float(v) for v in self.elevation_fov)
        object.__setattr__(self, "elevation_fov", (lo, hi))
        if int(self.n_elevation_bins) < 1 or int(self.n_azimuth_bins) < 1:
            raise ValueError("bin counts must be >= 1")
        if not lo < hi:
            raise ValueError("elevation_fov must satisfy min < max")
        if not (lo >= -90.0 and hi <= 90.0):
            raise ValueError("elevation_fov must lie within [-90, 90] degrees")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")

    @property
    def shape(self):
        return (self.n_elevation_bins, self.n_azimuth_bins)

    @property
    def size(self):
        return self.n_elevation_bins * self.n_azimuth_bins

    @property
    def elevation_step(self):
        """Row height in radians."""
        lo, hi = self.elevation_fov
        return np.radians(hi - lo) / self.n_elevation_bins

    @property
    def azimuth_step(self):
        return 2.0 * np.pi / self.n_azimuth_bins

    def elevation_centers(self):
        hi = np.radians(self.elevation_fov[1])
        return hi - (np.arange(self.n_elevation_bins) + 0.5) * self.elevation_step

    def azimuth_centers(self):
        return (np.arange(self.n_azimuth_bins) + 0.5) * self.azimuth_step

    def ray_directions(self):
        """Unit vectors through every bin center, shape (H, W, 3)."""
        el = self.elevation_centers()[:, None]
        az = self.azimuth_centers()[None, :]
        return np.stack(np.broadcast_arrays(np.cos(el) * np.cos(az),
                                            np.cos(el) * np.sin(az),
                                            np.sin(el) * np.ones_like(az)), axis=-1)


@dataclass
class PointCloud:
    xyz: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    labels: np.ndarray | None = None
    frame_id: str = ""

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("point coordinates must be finite")
        if self.labels is None:
            self.labels = np.full(len(self.xyz), UNLABELED, dtype=np.int8)
        else:
            self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
            if len(self.labels) != len(self.xyz):
                raise ValueError("labels and points differ in length")

    def __len__(self):
        return len(self.xyz)

    @property
    def is_labeled(self):
        return bool(np.any(self.labels != UNLABELED))


@dataclass
class RangeImage:
    spec: SensorSpec
    ranges: np.ndarray
    occupied: np.ndarray

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=np.float32)
        self.occupied = np.asarray(self.occupied, dtype=bool)
        if self.ranges.shape != self.spec.shape or self.occupied.shape != self.spec.shape:
            raise ValueError(f"grid shape must be {self.spec.shape}")
        # unoccupied payload is ignored; keep it canonical so files are reproducible
        self.ranges = np.where(self.occupied, self.ranges, np.float32(0.0)).astype(np.float32)

    @classmethod
    def empty(cls, spec):
        return cls(spec, np.zeros(spec.shape, np.float32), np.zeros(spec.shape, bool))

    @property
    def shape(self):
        return self.spec.shape

    def validate(self):
        r = self.ranges[self.occupied]
        if np.any(r <= 0) or np.any(r > self.spec.max_range):
            raise ValueError("occupied cells must hold ranges in (0, max_range]")

    def same_as(self, other):
        """Equality ignoring the payload of unoccupied cells."""
        return (self.spec == other.spec
                and np.array_equal(self.occupied, other.occupied)
                and np.array_equal(self.ranges[self.occupied], other.ranges[other.occupied]))


def _bin_points(xyz, spec):
    """Flat cell index, range and source index of every point inside the sensor's view."""
    r = np.linalg.norm(xyz, axis=1)
    keep = (r > 0) & (r <= spec.max_range)
    xyz, r = xyz[keep], r[keep]
    az = np.mod(np.arctan2(xyz[:, 1], xyz[:, 0]), 2.0 * np.pi)
    col = np.ceil(az / spec.azimuth_step).astype(np.int64) - 1
    col = np.clip(col, 0, spec.n_azimuth_bins - 1)

    el = np.arctan2(xyz[:, 2], np.hypot(xyz[:, 0], xyz[:, 1]))
    lo, hi = np.radians(spec.elevation_fov[0]), np.radians(spec.elevation_fov[1])
    inside = (el >= lo) & (el <= hi)
    u = (hi - el[inside]) / spec.elevation_step
    row = np.clip(np.ceil(u).astype(np.int64) - 1, 0, spec.n_elevation_bins - 1)
    flat = row * spec.n_azimuth_bins + col[inside]
    kept = np.flatnonzero(keep)[inside]
    return flat, r[inside], kept


def project(cloud: PointCloud, spec: SensorSpec, return_mask: bool = False):
    """Bin a cloud into a range image holding the mean range per cell.

    With ``return_mask=True`` a second value is returned: an (H, W) boolean
    grid marking cells that received at least one dynamic point, or None
    when the cloud carries no labels.
    """
    flat, r, kept = _bin_points(cloud.xyz, spec)
    n = spec.size
    counts = np.bincount(flat, minlength=n)
    sums = np.bincount(flat, weights=r, minlength=n)
    occupied = counts > 0
    mean = np.zeros(n)
    mean[occupied] = sums[occupied] / counts[occupied]
    ri = RangeImage(spec, mean.astype(np.float32).reshape(spec.shape), occupied.reshape(spec.shape))
    if not return_mask:
        return ri
    if not cloud.is_labeled:
        return ri, None
    dyn = np.bincount(flat, weights=(cloud.labels[kept] == DYNAMIC).astype(float), minlength=n)
    return ri, (dyn > 0).reshape(spec.shape)


def deproject(ri: RangeImage, mask=None) -> PointCloud:
    """One point per occupied cell along the bin-center ray."""
    dirs = ri.spec.ray_directions()[ri.occupied]
    xyz = dirs * ri.ranges[ri.occupied].astype(float)[:, None]
    labels = None
    if mask is not None:
        labels = np.where(np.asarray(mask, bool)[ri.occupied], DYNAMIC, STATIC)
    return PointCloud(xyz, labels)


def crop_rows(ri: RangeImage, start: int, stop: int) -> RangeImage:
    """Keep rows ``start <= row < stop`` and shrink the elevation FOV to their edges."""
    H = ri.spec.n_elevation_bins
    if not 0 <= start < stop <= H:
        raise ValueError(f"row interval [{start}, {stop}) is empty or outside [0, {H})")
    lo, hi = ri.spec.elevation_fov
    step = (hi - lo) / H
    spec = replace(ri.spec, n_elevation_bins=stop - start,
                   elevation_fov=(hi - stop * step, hi - start * step))
    if start == 0 and stop == H:
        spec = ri.spec
    return RangeImage(spec, ri.ranges[start:stop].copy(), ri.occupied[start:stop].copy())


def to_vector(ri: RangeImage, fill: float = 0.0) -> np.ndarray:
    """Row-major normalized ranges; unoccupied cells take ``fill``."""
    v = ri.ranges.astype(float) / ri.spec.max_range
    return np.where(ri.occupied, v, fill).reshape(-1)


def from_vector(v, spec: SensorSpec, occupancy) -> RangeImage:
    """Inverse of :func:`to_vector` given the occupancy grid.

    Entries are clamped to [0, 1]. An occupied cell whose value clamps to 0
    cannot hold a valid range and is returned as unoccupied.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != spec.size:
        raise ValueError(f"vector length {v.size} does not match grid size {spec.size}")
    v = np.clip(v, 0.0, 1.0).reshape(spec.shape)
    ranges = (v * spec.max_range).astype(np.float32)
    occupied = np.asarray(occupancy, bool).reshape(spec.shape) & (ranges > 0)
    return RangeImage(spec, ranges, occupied)


def blend(mask, static_recon: RangeImage, dynamic_in: RangeImage) -> RangeImage:
    """Cell-wise ``mask * static_recon + (1 - mask) * dynamic_in``."""
    mask = np.asarray(mask)
    if mask.shape != dynamic_in.shape or static_recon.shape != dynamic_in.shape:
        raise ValueError("mask and range images must share one shape")
    if static_recon.spec != dynamic_in.spec:
        raise ValueError("range images were made with different sensor specs")
    take = mask.astype(bool)
    return RangeImage(dynamic_in.spec,
                      np.where(take, static_recon.ranges, dynamic_in.ranges),
                      np.where(take, static_recon.occupied, dynamic_in.occupied))


def transform(cloud: PointCloud, pose: Pose) -> PointCloud:
    return PointCloud(transform_points(cloud.xyz, pose), cloud.labels.copy(), cloud.frame_id)


def add_noise(ri: RangeImage, sigma: float, seed=0) -> RangeImage:
    """Add N(0, sigma^2) to the normalized range of each occupied cell.

    Results are clamped back into (0, 1] of ``max_range``; occupancy never changes.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return RangeImage(ri.spec, ri.ranges.copy(), ri.occupied.copy())
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=ri.shape)
    v = ri.ranges.astype(float) / ri.spec.max_range + noise
    floor = np.finfo(np.float32).eps
    v = np.clip(v, floor, 1.0)
    return RangeImage(ri.spec, (v * ri.spec.max_range).astype(np.float32), ri.occupied.copy())
