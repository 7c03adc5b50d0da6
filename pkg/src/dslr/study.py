"""Noise sweep: how Chamfer error to the clean scan and the quality score grow
as Gaussian range noise is injected into clean scans."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .fileio import atomic_write_text
from .lqi import LqiModel, lqi_scores
from .metrics import chamfer
from .scan import add_noise, deproject
from .svg import chart

SWEEP_COLUMNS = ("scan_id", "sigma", "seed", "cd_raw", "cd_normalized", "lqi")


def noise_sweep(scans, sigmas, model: LqiModel, seeds=(0, 1, 2), scan_ids=None):
    """One row per (scan, sigma, seed); sigma is in normalized range units."""
    scans = list(scans)
    sigmas = [float(s) for s in sigmas]
    if not scans or not sigmas:
        raise ValueError("noise sweep needs scans and at least one sigma")
    if any(s < 0 for s in sigmas):
        raise ValueError("sigmas must be non-negative")
    ids = list(scan_ids) if scan_ids is not None else [f"{k:06d}" for k in range(len(scans))]
    rows, noisy = [], []
    for k, scan in enumerate(scans):
        clean = deproject(scan)
        for j, sigma in enumerate(sigmas):
            for seed in seeds:
                ri = add_noise(scan, sigma, seed=[seed, k, j])
                cd = chamfer(deproject(ri), clean)
                rows.append({"scan_id": ids[k], "sigma": sigma, "seed": int(seed),
                             "cd_raw": cd.raw, "cd_normalized": cd.normalized})
                noisy.append(ri)
    for row, score in zip(rows, lqi_scores(model, noisy)):
        row["lqi"] = float(score)
    return rows


def summarize(rows):
    """Median CD and LQI per sigma, plus rank correlations over all rows."""
    sig = np.array([r["sigma"] for r in rows])
    cd = np.array([r["cd_normalized"] for r in rows])
    q = np.array([r["lqi"] for r in rows])
    levels = sorted(set(sig.tolist()))
    return {
        "sigma": levels,
        "median_cd": [float(np.median(cd[sig == s])) for s in levels],
        "median_lqi": [float(np.median(q[sig == s])) for s in levels],
        "spearman_lqi_cd": float(spearmanr(q, cd)[0]),
        "spearman_sigma_lqi": float(spearmanr(sig, q)[0]),
    }


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r["scan_id"], repr(r["sigma"]), r["seed"], repr(r["cd_raw"]),
                    repr(r["cd_normalized"]), repr(r["lqi"])])
    return buf.getvalue()


def sweep_plots(rows):
    """(LQI vs CD scatter, CD vs sigma line) as SVG text."""
    s = summarize(rows)
    scatter = chart([("scans", [r["cd_normalized"] for r in rows], [r["lqi"] for r in rows], "points")],
                    xlabel="normalized Chamfer distance to clean (m^2)", ylabel="LQI (predicted sigma)",
                    title=f"LQI vs CD, Spearman {s['spearman_lqi_cd']:.3f}")
    line = chart([("median CD", s["sigma"], s["median_cd"], "line")],
                 xlabel="injected sigma (normalized range)", ylabel="median normalized CD (m^2)",
                 title="CD vs injected noise")
    return scatter, line


def write_sweep(out_dir, rows):
    out_dir = Path(out_dir)
    atomic_write_text(out_dir / "noise_sweep.csv", sweep_csv(rows))
    scatter, line = sweep_plots(rows)
    atomic_write_text(out_dir / "lqi_vs_cd.svg", scatter)
    atomic_write_text(out_dir / "cd_vs_sigma.svg", line)
    return [out_dir / "noise_sweep.csv", out_dir / "lqi_vs_cd.svg", out_dir / "cd_vs_sigma.svg"]
