"""Point-set and distribution distances: Chamfer, EMD and kernel MMD."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .scan import PointCloud

BRUTE_FORCE_BELOW = 64
EMD_CAP = 256
EXACT_EMD_CAP = 2048


def _points(p):
    xyz = p.xyz if isinstance(p, PointCloud) else np.asarray(p, dtype=float)
    xyz = xyz.reshape(-1, 3) if xyz.size else np.empty((0, 3))
    if len(xyz) == 0:
        raise ValueError("point set is empty")
    return xyz


class ChamferResult(NamedTuple):
    raw: float  # sum of squared nearest-neighbour distances, both directions
    normalized: float  # each directed sum divided by its set size


def _nn_sq_dists(src, dst):
    """Squared distance from every point of ``src`` to its nearest point in ``dst``."""
    if min(len(src), len(dst)) < BRUTE_FORCE_BELOW:
        out = np.empty(len(src))
        step = max(1, 2_000_000 // max(len(dst), 1))
        for s in range(0, len(src), step):
            diff = src[s:s + step, None, :] - dst[None, :, :]
            out[s:s + step] = np.einsum("ijk,ijk->ij", diff, diff).min(axis=1)
        return out
    _, idx = cKDTree(dst).query(src, k=1)
    diff = src - dst[idx]
    # recompute from the coordinates so both paths round identically
    return np.einsum("ij,ij->i", diff, diff)


def chamfer(p1, p2) -> ChamferResult:
    a, b = _points(p1), _points(p2)
    d_ab = _nn_sq_dists(a, b)
    d_ba = _nn_sq_dists(b, a)
    raw = math.fsum(d_ab) + math.fsum(d_ba)
    norm = math.fsum(d_ab) / len(a) + math.fsum(d_ba) / len(b)
    return ChamferResult(float(raw), float(norm))


class EmdResult(NamedTuple):
    value: float  # total cost of the matching, in meters
    exact: bool
    n: int  # points per set after resampling


def _resample(xyz, n, seed):
    if len(xyz) == n:
        return xyz
    # the draw depends only on (seed, size, n) so emd stays symmetric
    idx = np.random.default_rng([seed, len(xyz), n]).integers(0, len(xyz), size=n)
    return xyz[idx]


def _cost_matrix(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _sinkhorn_cost(C, iters=500):
    n = len(C)
    scale = float(np.median(C)) or 1.0
    eps = 0.01 * scale
    log_mu = np.full(n, -math.log(n))
    f = np.zeros(n)
    g = np.zeros(n)
    M = -C / eps
    for _ in range(iters):
        f = eps * (log_mu - _logsumexp(M + g[None, :] / eps, axis=1))
        g = eps * (log_mu - _logsumexp(M + f[:, None] / eps, axis=0))
    plan = np.exp(M + f[:, None] / eps + g[None, :] / eps)
    return float(n * np.sum(plan * C))


def _logsumexp(a, axis):
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def emd(p1, p2, cap=EMD_CAP, seed=0, resample=True, exact_cap=EXACT_EMD_CAP, fallback=True) -> EmdResult:
    """Minimum-cost bijection between two equal-size point sets.

    Sets are resampled with replacement to ``min(|P1|, |P2|, cap)`` points
    when their sizes differ or exceed ``cap``. Above ``exact_cap`` points an
    entropic transport estimate is returned with ``exact=False``.
    """
    a, b = _points(p1), _points(p2)
    n = min(len(a), len(b), cap)
    if len(a) != len(b) or len(a) > cap:
        if not resample:
            raise ValueError(f"sets of size {len(a)} and {len(b)} need resampling")
        a, b = _resample(a, n, seed), _resample(b, n, seed)
    C = _cost_matrix(a, b)
    if n > exact_cap:
        if not fallback:
            raise ValueError(f"{n} points exceed the exact solver cap {exact_cap}")
        return EmdResult(_sinkhorn_cost(C), False, n)
    rows, cols = linear_sum_assignment(C)
    return EmdResult(math.fsum(C[rows, cols]), True, n)


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian RBF kernel; ``bandwidth`` in the data's units or ``"median"``."""

    bandwidth: float | str = "median"

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")


def _sq_dists(x, y):
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _latent_sets(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if len(x) == 0 or len(y) == 0:
        raise ValueError("mmd needs non-empty sets")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch {x.shape[1]} vs {y.shape[1]}")
    return x, y


def median_bandwidth(x, y):
    """Median of the pooled pairwise distances (1.0 if they are all zero)."""
    pooled = np.vstack([x, y])
    d = np.sqrt(_sq_dists(pooled, pooled)[np.triu_indices(len(pooled), k=1)])
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def resolve_bandwidth(x, y, kernel: KernelSpec):
    if kernel.bandwidth == "median":
        return median_bandwidth(x, y)
    return float(kernel.bandwidth)


def mmd2(x, y, kernel: KernelSpec = KernelSpec()) -> float:
    """Biased squared MMD estimate, clamped at zero."""
    x, y = _latent_sets(x, y)
    s2 = 2.0 * resolve_bandwidth(x, y, kernel) ** 2
    val = (np.exp(-_sq_dists(x, x) / s2).mean()
           + np.exp(-_sq_dists(y, y) / s2).mean()
           - 2.0 * np.exp(-_sq_dists(x, y) / s2).mean())
    return max(float(val), 0.0)


def mmd2_grad(x, y, sigma):
    """Gradients of the biased MMD^2 with respect to x and y at a fixed bandwidth."""
    x, y = _latent_sets(x, y)
    n, m = len(x), len(y)
    s2 = sigma * sigma
    kxx = np.exp(-_sq_dists(x, x) / (2 * s2))
    kyy = np.exp(-_sq_dists(y, y) / (2 * s2))
    kxy = np.exp(-_sq_dists(x, y) / (2 * s2))

    def pull(k, a, b):
        # sum_j k_ij (a_i - b_j)
        return k.sum(axis=1)[:, None] * a - k @ b

    gx = -2.0 / (n * n * s2) * pull(kxx, x, x) + 2.0 / (n * m * s2) * pull(kxy, x, y)
    gy = -2.0 / (m * m * s2) * pull(kyy, y, y) + 2.0 / (n * m * s2) * pull(kxy.T, y, x)
    return gx, gy


# -- batch evaluation

EVAL_COLUMNS = ("scan_id", "cd_raw", "cd_normalized", "emd", "emd_exactness_flag", "lqi")


def evaluate_pair(scan_id, pred, gt, lqi=None, emd_cap=EMD_CAP, seed=0):
    cd = chamfer(pred, gt)
    e = emd(pred, gt, cap=emd_cap, seed=seed)
    return {"scan_id": scan_id, "cd_raw": cd.raw, "cd_normalized": cd.normalized,
            "emd": e.value, "emd_exactness_flag": "exact" if e.exact else "approximate",
            "lqi": float("nan") if lqi is None else float(lqi)}


def evaluate_batch(items, threads=1, emd_cap=EMD_CAP, seed=0):
    """``items`` yields (scan_id, pred, gt, lqi_or_None); row order follows the input."""
    items = list(items)

    def one(item):
        return evaluate_pair(*item, emd_cap=emd_cap, seed=seed)

    if threads <= 1:
        return [one(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, items))


def format_eval_csv(rows) -> str:
    lines = [",".join(EVAL_COLUMNS)]
    for r in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(float(v)) for v in (r[c] for c in EVAL_COLUMNS)))
    return "\n".join(lines) + "\n"
