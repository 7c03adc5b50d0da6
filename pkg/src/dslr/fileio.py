"""Binary scan formats, PBM masks and atomic file writes."""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .scan import PointCloud, RangeImage, SensorSpec

RIMG_MAGIC = b"RIMG"
RIMG_VERSION = 1
_RIMG_HEADER = struct.Struct("<4sIIIfff")


def atomic_write_bytes(path, data: bytes):
    """Write via a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- point clouds: little-endian float32 (x, y, z, label) with no header

def cloud_to_bytes(cloud: PointCloud) -> bytes:
    out = np.empty((len(cloud), 4), dtype="<f4")
    out[:, :3] = cloud.xyz
    out[:, 3] = cloud.labels
    return out.tobytes()


def write_cloud(path, cloud: PointCloud):
    atomic_write_bytes(path, cloud_to_bytes(cloud))


def read_cloud(path, labeled=True) -> PointCloud:
    """Read a float32 quadruple file; pass ``labeled=False`` for KITTI scans,
    whose fourth field is intensity."""
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise ValueError(f"{path}: size {len(raw)} is not a multiple of 16 bytes")
    arr = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    labels = None
    if labeled:
        labels = np.rint(arr[:, 3]).astype(np.int8)
        if np.any((labels < -1) | (labels > 1)):
            raise ValueError(f"{path}: label field outside {{-1, 0, 1}}")
    return PointCloud(arr[:, :3].astype(float), labels, frame_id=Path(path).stem)


# -- range images

def rimg_to_bytes(ri: RangeImage, mask=None) -> bytes:
    H, W = ri.shape
    lo, hi = ri.spec.elevation_fov
    parts = [
        _RIMG_HEADER.pack(RIMG_MAGIC, RIMG_VERSION, H, W, lo, hi, ri.spec.max_range),
        ri.ranges.astype("<f4").tobytes(),
        ri.occupied.astype(np.uint8).tobytes(),
    ]
    if mask is not None:
        mask = np.asarray(mask, bool)
        if mask.shape != ri.shape:
            raise ValueError("mask shape does not match the range image")
        parts.append(mask.astype(np.uint8).tobytes())
    return b"".join(parts)


def rimg_from_bytes(raw: bytes, source="<bytes>"):
    """Return (RangeImage, mask or None)."""
    if len(raw) < _RIMG_HEADER.size:
        raise ValueError(f"{source}: truncated RIMG header")
    magic, version, H, W, lo, hi, max_range = _RIMG_HEADER.unpack_from(raw)
    if magic != RIMG_MAGIC:
        raise ValueError(f"{source}: bad magic {magic!r}")
    if version != RIMG_VERSION:
        raise ValueError(f"{source}: unsupported RIMG version {version}")
    n = H * W
    body = len(raw) - _RIMG_HEADER.size
    if body not in (5 * n, 6 * n):
        raise ValueError(f"{source}: payload of {body} bytes does not fit a {H}x{W} grid")
    spec = SensorSpec(H, W, (lo, hi), max_range)
    off = _RIMG_HEADER.size
    ranges = np.frombuffer(raw, "<f4", n, off).reshape(H, W)
    off += 4 * n
    occupied = np.frombuffer(raw, np.uint8, n, off).reshape(H, W).astype(bool)
    off += n
    mask = None
    if body == 6 * n:
        mask = np.frombuffer(raw, np.uint8, n, off).reshape(H, W).astype(bool)
    return RangeImage(spec, ranges.astype(np.float32), occupied), mask


def write_rimg(path, ri: RangeImage, mask=None):
    atomic_write_bytes(path, rimg_to_bytes(ri, mask))


def read_rimg(path):
    return rimg_from_bytes(Path(path).read_bytes(), source=str(path))


# -- masks as binary PBM (P4); 1 = dynamic

def mask_to_pbm(mask) -> bytes:
    mask = np.asarray(mask, bool)
    H, W = mask.shape
    return f"P4\n{W} {H}\n".encode("ascii") + np.packbits(mask, axis=1).tobytes()


def mask_from_pbm(raw: bytes, source="<bytes>"):
    tokens = []
    pos = 0
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P4":
        raise ValueError(f"{source}: not a binary PBM")
    W, H = int(tokens[1]), int(tokens[2])
    pos += 1
    row_bytes = (W + 7) // 8
    packed = np.frombuffer(raw, np.uint8, H * row_bytes, pos).reshape(H, row_bytes)
    return np.unpackbits(packed, axis=1)[:, :W].astype(bool)


def write_pbm(path, mask):
    atomic_write_bytes(path, mask_to_pbm(mask))


def read_pbm(path):
    return mask_from_pbm(Path(path).read_bytes(), source=str(path))


# -- provenance sidecars

def provenance_record(config_hash, seed, version, **extra):
    rec = {"config_hash": config_hash, "seed": seed, "tool_version": version}
    rec.update(extra)
    return rec


def write_provenance(path, record: dict):
    """Sidecar ``<path>.prov.json`` next to an output."""
    atomic_write_text(str(path) + ".prov.json", json.dumps(record, sort_keys=True, indent=2) + "\n")
