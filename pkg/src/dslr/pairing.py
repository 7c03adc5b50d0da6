"""Paired dynamic/static correspondences built from two runs over the same area."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import atomic_write_text
from .geometry import Pose, relative, rotation_angle_deg, translation_distance
from .scan import blend, deproject, project, transform


@dataclass(frozen=True)
class PairThreshold:
    delta_trans: float = 0.5
    delta_rot: float = 5.0  # degrees
    mode: str = "all_matches"

    def __post_init__(self):
        if self.delta_trans < 0 or self.delta_rot < 0:
            raise ValueError("thresholds must be non-negative")
        if self.mode not in ("all_matches", "nearest_only"):
            raise ValueError(f"unknown pairing mode {self.mode!r}")

    def accepts(self, rel: Pose) -> bool:
        return translation_distance(rel) < self.delta_trans and rotation_angle_deg(rel) < self.delta_rot


@dataclass
class Pair:
    dynamic_index: int
    static_index: int
    relative: Pose  # static scan frame expressed in the dynamic scan frame
    dynamic_ref: str = ""
    static_ref: str = ""
    transformed_ref: str = ""
    transformed: object = None  # RangeImage once materialized


@dataclass
class PairManifest:
    pairs: list = field(default_factory=list)
    threshold: PairThreshold | None = None
    status: str = "ok"

    def __len__(self):
        return len(self.pairs)

    @property
    def counts(self):
        return {"pairs": len(self.pairs),
                "dynamic_scans": len({p.dynamic_index for p in self.pairs}),
                "static_scans": len({p.static_index for p in self.pairs})}


def _candidates(dyn_poses, static_poses, th):
    tp = np.array([p.translation for p in dyn_poses])
    tq = np.array([q.translation for q in static_poses])
    qp = np.array([p.rotation for p in dyn_poses])
    qq = np.array([q.rotation for q in static_poses])
    dist = np.linalg.norm(tp[:, None, :] - tq[None, :, :], axis=2)
    # relative rotation conj(qp) * qq for every pair
    x1, y1, z1, w1 = (qp[:, k, None] for k in range(4))
    x2, y2, z2, w2 = (qq[None, :, k] for k in range(4))
    w = w1 * w2 + x1 * x2 + y1 * y2 + z1 * z2
    vx = w1 * x2 - x1 * w2 - y1 * z2 + z1 * y2
    vy = w1 * y2 + x1 * z2 - y1 * w2 - z1 * x2
    vz = w1 * z2 - x1 * y2 + y1 * x2 - z1 * w2
    ang = np.degrees(2.0 * np.arctan2(np.sqrt(vx ** 2 + vy ** 2 + vz ** 2), np.abs(w)))
    # loose prefilter; the exact test runs on the composed relative pose
    return dist < th.delta_trans + 1e-9, ang < th.delta_rot + 1e-9, dist


def pair_runs(dynamic, static, th: PairThreshold = PairThreshold(), materialize=True) -> PairManifest:
    """Match every dynamic scan with the static scans whose pose lies within the thresholds.

    The static scan of each pair is re-rendered in the dynamic scan's frame
    (``project(transform(deproject(s), r))``) unless ``materialize`` is False.
    """
    if len(dynamic) == 0 or len(static) == 0:
        raise ValueError("both runs must contain scans")
    ok_t, ok_r, dist = _candidates(dynamic.poses, static.poses, th)
    pairs = []
    for i in range(len(dynamic)):
        found = []
        for j in np.flatnonzero(ok_t[i] & ok_r[i]):
            rel = relative(dynamic.poses[i], static.poses[j])
            if th.accepts(rel):
                found.append((dist[i, j], int(j), rel))
        if th.mode == "nearest_only" and found:
            found = [min(found, key=lambda f: (f[0], f[1]))]
        for _, j, rel in found:
            pair = Pair(i, j, rel,
                        dynamic_ref=dynamic.paths[i] if dynamic.paths else "",
                        static_ref=static.paths[j] if static.paths else "")
            if materialize and static.scans:
                pair.transformed = align_scan(static.scans[j], rel)
            pairs.append(pair)
    manifest = PairManifest(pairs, th)
    if not pairs:
        manifest.status = "empty"
        warnings.warn("pair_runs found no pose pairs within the thresholds", RuntimeWarning, stacklevel=2)
    return manifest


def align_scan(scan, rel: Pose):
    """Render ``scan`` from a sensor placed at ``inverse(rel)`` relative to it."""
    return project(transform(deproject(scan), rel), scan.spec)


def refine_with_segmentation(transformed_static, dynamic_scan, dynamic_mask):
    """Training target that keeps the dynamic scan's own static cells and
    in-paints its dynamic cells from the aligned static scan."""
    return blend(dynamic_mask, transformed_static, dynamic_scan)


def split_manifest(m: PairManifest, ratios=(0.8, 0.1, 0.1), seed=0):
    """Deterministic train/val/test partition keyed on dynamic-scan identity."""
    ratios = np.asarray(ratios, float)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    ids = sorted({p.dynamic_index for p in m.pairs})
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(ratios[0] * len(ids)))
    n_val = int(round(ratios[1] * len(ids)))
    n_val = min(n_val, len(ids) - n_train)
    buckets = {}
    for rank, k in enumerate(order):
        buckets[ids[k]] = 0 if rank < n_train else (1 if rank < n_train + n_val else 2)
    parts = ([], [], [])
    for p in m.pairs:
        parts[buckets[p.dynamic_index]].append(p)
    return tuple(PairManifest(part, m.threshold, m.status) for part in parts)


# -- manifest text format: one pair per line, tab separated:
#    dyn_path  static_path  tx ty tz qx qy qz qw  transformed_static_path

def format_manifest(m: PairManifest) -> str:
    lines = []
    for p in m.pairs:
        fields = [p.dynamic_ref, p.static_ref, *(repr(v) for v in p.relative.as_tuple()), p.transformed_ref]
        if any("\t" in f or "\n" in f for f in fields):
            raise ValueError("paths may not contain tabs or newlines")
        lines.append("\t".join(fields))
    return "".join(line + "\n" for line in lines)


def parse_manifest(text: str, source="<text>") -> PairManifest:
    pairs = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 10:
            raise ValueError(f"{source}:{lineno}: expected 10 tab-separated fields, got {len(fields)}")
        v = [float(x) for x in fields[2:9]]
        rel = Pose(v[3:7], v[0:3])
        pairs.append(Pair(-1, -1, rel, fields[0], fields[1], fields[9]))
    # recover integer identities from the paths so splits stay keyed on scans
    dyn_ids = {ref: k for k, ref in enumerate(sorted({p.dynamic_ref for p in pairs}))}
    st_ids = {ref: k for k, ref in enumerate(sorted({p.static_ref for p in pairs}))}
    for p in pairs:
        p.dynamic_index, p.static_index = dyn_ids[p.dynamic_ref], st_ids[p.static_ref]
    return PairManifest(pairs, None, "ok" if pairs else "empty")


def write_manifest(path, m: PairManifest):
    atomic_write_text(path, format_manifest(m))


def read_manifest(path) -> PairManifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"), source=str(path))

