"""Loading simulator run directories and resolving manifest paths."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .fileio import atomic_write_text, read_rimg
from .pairing import PairManifest, format_manifest, parse_manifest
from .scan import to_vector
from .sim import Run
from .traj import read_tum


def scan_files(directory):
    files = sorted(Path(directory).glob("*.rimg"))
    if not files:
        raise FileNotFoundError(f"{directory}: no .rimg files")
    return files


def load_run(directory, kind=None) -> Run:
    """Read NNNNNN.rimg scans (with any mask planes) and trajectory.txt."""
    directory = Path(directory)
    files = scan_files(directory)
    traj = read_tum(directory / "trajectory.txt")
    if len(traj) != len(files):
        raise ValueError(f"{directory}: {len(files)} scans but {len(traj)} poses")
    scans, masks = [], []
    for f in files:
        ri, mask = read_rimg(f)
        scans.append(ri)
        masks.append(mask if mask is not None else np.zeros(ri.shape, bool))
    has_masks = any(m.any() for m in masks)
    return Run(kind or directory.name, traj.poses(), scans, masks if has_masks else None,
               [str(f) for f in files])


def load_scans(paths):
    """Range images from files and/or directories, in sorted order within directories."""
    files = []
    for p in paths:
        p = Path(p)
        files.extend(scan_files(p) if p.is_dir() else [p])
    out = []
    for f in files:
        ri, mask = read_rimg(f)
        out.append((f, ri, mask))
    return out


def write_manifest_relative(path, m: PairManifest):
    """Store scan references relative to the manifest's own directory."""
    base = Path(path).parent.resolve()

    def rel(ref):
        return os.path.relpath(Path(ref).resolve(), base) if ref else ref

    shadow = PairManifest([type(p)(p.dynamic_index, p.static_index, p.relative, rel(p.dynamic_ref),
                                   rel(p.static_ref), rel(p.transformed_ref)) for p in m.pairs],
                          m.threshold, m.status)
    atomic_write_text(path, format_manifest(shadow))


def read_manifest_resolved(path) -> PairManifest:
    base = Path(path).parent
    m = parse_manifest(Path(path).read_text(encoding="utf-8"), source=str(path))
    for p in m.pairs:
        p.dynamic_ref = str(base / p.dynamic_ref) if p.dynamic_ref else ""
        p.static_ref = str(base / p.static_ref) if p.static_ref else ""
        p.transformed_ref = str(base / p.transformed_ref) if p.transformed_ref else ""
    return m


def manifest_arrays(m: PairManifest):
    """(targets, dynamic) normalized vectors, row k for pair k, plus dynamic masks."""
    if not m.pairs:
        raise ValueError("manifest holds no pairs")
    cache = {}

    def get(ref):
        if ref not in cache:
            cache[ref] = read_rimg(ref)
        return cache[ref]

    targets, dyn, masks = [], [], []
    for p in m.pairs:
        if not p.transformed_ref:
            raise ValueError("manifest pairs need an aligned static scan")
        targets.append(to_vector(get(p.transformed_ref)[0]))
        ri, mask = get(p.dynamic_ref)
        dyn.append(to_vector(ri))
        masks.append(mask)
    return np.array(targets), np.array(dyn), masks
