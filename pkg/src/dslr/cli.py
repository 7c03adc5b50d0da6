"""Command-line entry point: ``dslr <command> [options]``.

Every command writes its outputs atomically, attaches a ``.prov.json``
provenance record, prints a one-line JSON summary on stdout and, on failure,
a single ``dslr: error code=N kind=...: message`` line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import struct
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .dataset import load_run, load_scans, manifest_arrays, read_manifest_resolved, write_manifest_relative
from .fileio import (atomic_write_bytes, atomic_write_text, read_pbm, read_rimg, sha256_file, write_cloud,
                     write_provenance, write_rimg)
from .lqi import lqi_from_bytes, lqi_scores, lqi_to_bytes, train_lqi
from .metrics import evaluate_batch, format_eval_csv
from .model import (PHASE_PREREQUISITES, DslrState, PhaseOrderError, discriminator_accuracy, dslr_seg, history_csv, reconstruct,
                    state_from_bytes, state_to_bytes, train_adversarial, train_autoencoder,
                    train_discriminator, train_uda)
from .nn import TrainingDiverged
from .pairing import PairThreshold, pair_runs, refine_with_segmentation, split_manifest
from .scan import deproject, to_vector
from .sim import generate_paired_runs, loop_path, make_world, save_world
from .study import noise_sweep, summarize, write_sweep
from .traj import AssociationError, ate, drift, read_tum, rpe

EXIT_USAGE, EXIT_IO, EXIT_VALIDATION, EXIT_DIVERGED = 1, 2, 3, 4
log = logging.getLogger("dslr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- shared plumbing

def _provenance(cfg: RunConfig, command, path, **extra):
    rec = {"config_hash": cfg.digest(), "seed": cfg.seed, "tool_version": __version__, "command": command}
    p = Path(path)
    if p.is_file():
        rec["sha256"] = sha256_file(p)
    elif p.is_dir():
        h = hashlib.sha256()
        files = sorted(f for f in p.iterdir() if f.is_file() and not f.name.endswith(".prov.json"))
        for f in files:
            h.update(f.name.encode())
            h.update(sha256_file(f).encode())
        rec["files"] = len(files)
        rec["sha256_tree"] = h.hexdigest()
    rec.update(extra)
    write_provenance(p, rec)


def _emit(summary):
    print(json.dumps(summary, sort_keys=True))


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands

def cmd_simulate(args, cfg: RunConfig):
    out = _out(args)
    w, pth, spec = cfg.section("world"), cfg.section("path"), cfg.sensor
    world = make_world(seed=w["seed"], n_boxes=w["n_boxes"], room=(w["room_x"], w["room_y"]),
                       duration=w["duration"], n_pillars=w["n_pillars"])
    save_world(out / "world.ini", world)
    static, dynamic = generate_paired_runs(world, loop_path(**pth), spec, out)
    for name in ("world.ini", "static", "dynamic"):
        _provenance(cfg, "simulate", out / name)
    summary = {"command": "simulate", "scans": len(static), "out": str(out)}
    if args.target:
        t = cfg.section("target")
        tworld = make_world(seed=t["seed"], n_boxes=t["n_boxes"], room=(w["room_x"], w["room_y"]),
                            duration=w["duration"], n_pillars=w["n_pillars"])
        tpath = loop_path(n_poses=t["n_poses"], a=t["a"], b=t["b"], dt=pth["dt"])
        generate_paired_runs(tworld, tpath, spec, out / "target")
        save_world(out / "target" / "world.ini", tworld)
        _provenance(cfg, "simulate", out / "target" / "dynamic")
        summary["target_scans"] = len(tpath)
    dyn_frac = float(np.mean([m.mean() for m in dynamic.masks]))
    summary["mean_dynamic_fraction"] = dyn_frac
    return summary


def cmd_pair(args, cfg: RunConfig):
    out = _out(args)
    base = cfg.threshold
    th = PairThreshold(args.delta_trans if args.delta_trans is not None else base.delta_trans,
                       args.delta_rot if args.delta_rot is not None else base.delta_rot,
                       args.mode or base.mode)
    dynamic = load_run(args.dynamic_dir, "dynamic")
    static = load_run(args.static_dir, "static")
    if args.refine_seg and dynamic.masks is None:
        raise ValueError("--refine-seg needs dynamic scans that carry mask planes")
    manifest = pair_runs(dynamic, static, th)
    if not manifest.pairs:
        raise ValueError(f"no pairs within delta_trans={th.delta_trans} m, delta_rot={th.delta_rot} deg")
    aligned = out / "aligned"
    for p in manifest.pairs:
        target = p.transformed
        if args.refine_seg:
            target = refine_with_segmentation(target, dynamic.scans[p.dynamic_index],
                                              dynamic.masks[p.dynamic_index])
        name = f"{Path(p.dynamic_ref).stem}_{Path(p.static_ref).stem}.rimg"
        write_rimg(aligned / name, target)
        p.transformed_ref = str(aligned / name)
    _provenance(cfg, "pair", aligned, refine_seg=bool(args.refine_seg))
    write_manifest_relative(out / "manifest.tsv", manifest)
    _provenance(cfg, "pair", out / "manifest.tsv")
    parts = split_manifest(manifest, cfg.section("pairing")["split"], seed=cfg.seed)
    for name, part in zip(("train", "val", "test"), parts):
        write_manifest_relative(out / f"{name}.tsv", part)
        _provenance(cfg, "pair", out / f"{name}.tsv")
    return {"command": "pair", **manifest.counts, "train": len(parts[0]), "val": len(parts[1]),
            "test": len(parts[2]), "out": str(out)}


_PHASE_NAMES = {"ae": "ae", "disc": "di", "adv": "adv", "uda": "uda"}


def _load_state(path):
    return state_from_bytes(Path(path).read_bytes(), source=str(path))


def _unique_rows(manifest, targets, dynamic):
    seen_t, seen_d, rows = set(), set(), []
    for p, t, d in zip(manifest.pairs, targets, dynamic):
        if p.transformed_ref not in seen_t:
            seen_t.add(p.transformed_ref)
            rows.append(t)
        if p.dynamic_ref not in seen_d:
            seen_d.add(p.dynamic_ref)
            rows.append(d)
    return np.array(rows)


def cmd_train(args, cfg: RunConfig):
    out = _out(args)
    if args.phase == "lqi":
        if not args.scans:
            raise UsageError("train lqi needs --scans")
        scans = [ri for _, ri, _ in load_scans(args.scans)]
        history = []
        model = train_lqi(scans, cfg.lqi, history)
        ckpt = out / "lqi.ckpt"
        atomic_write_bytes(ckpt, lqi_to_bytes(model))
        atomic_write_text(out / "lqi.log.csv", history_csv(history))
        for f in (ckpt, out / "lqi.log.csv"):
            _provenance(cfg, "train lqi", f)
        return {"command": "train", "phase": "lqi", "final_loss": history[-1]["loss"] if history else None,
                "checkpoint": str(ckpt)}

    phase = _PHASE_NAMES[args.phase]
    if not args.manifest:
        raise UsageError(f"train {args.phase} needs --manifest")
    if phase == "ae":
        state = DslrState.create(cfg.model)
    else:
        if not args.ckpt_in:
            raise UsageError(f"train {args.phase} needs --ckpt-in")
        state = _load_state(args.ckpt_in)
    expected = PHASE_PREREQUISITES[phase]
    if state.phase not in expected:
        raise PhaseOrderError(f"train {args.phase} needs a checkpoint from phase "
                              f"{'/'.join(expected)}, got {state.phase!r}")
    manifest = read_manifest_resolved(args.manifest)
    targets, dynamic, _ = manifest_arrays(manifest)
    summary = {"command": "train", "phase": args.phase, "pairs": len(manifest)}
    n_before = len(state.history)
    if phase == "ae":
        train_autoencoder(state, _unique_rows(manifest, targets, dynamic))
    elif phase == "di":
        train_discriminator(state, targets, dynamic)
        if args.val:
            vt, vd, _ = manifest_arrays(read_manifest_resolved(args.val))
            summary["heldout_accuracy"] = discriminator_accuracy(state, vt, vd, seed=cfg.seed)
    elif phase == "adv":
        train_adversarial(state, targets, dynamic)
    else:
        if not args.target:
            raise UsageError("train uda needs --target with target-domain dynamic scans")
        tv = np.array([to_vector(ri) for _, ri, _ in load_scans(args.target)])
        train_uda(state, targets, dynamic, tv)
    rows = state.history[n_before:]
    if rows:
        summary["first_loss"], summary["final_loss"] = rows[0]["loss"], rows[-1]["loss"]
    ckpt = out / f"{args.phase}.ckpt"
    atomic_write_bytes(ckpt, state_to_bytes(state))
    atomic_write_text(out / f"{args.phase}.log.csv", history_csv(rows))
    for f in (ckpt, out / f"{args.phase}.log.csv"):
        _provenance(cfg, f"train {args.phase}", f)
    summary["checkpoint"] = str(ckpt)
    return summary


def _mask_for(path, embedded, mask_dir):
    if mask_dir:
        return read_pbm(Path(mask_dir) / f"{Path(path).stem}.pbm")
    if embedded is None:
        raise ValueError(f"{path}: --seg-mask needs a mask plane or --mask-dir")
    return embedded


def cmd_reconstruct(args, cfg: RunConfig):
    out = _out(args)
    state = _load_state(args.checkpoint)
    inputs = list(args.scans)
    if args.manifest:
        m = read_manifest_resolved(args.manifest)
        inputs += list(dict.fromkeys(p.dynamic_ref for p in m.pairs))
    if not inputs:
        raise UsageError("reconstruct needs scans or --manifest")
    items = load_scans(inputs)
    for path, ri, mask in items:
        if args.seg_mask:
            res = dslr_seg(ri, _mask_for(path, mask, args.mask_dir), state)
        else:
            res = reconstruct(ri, state)
        write_rimg(out / f"{Path(path).stem}.rimg", res)
        write_cloud(out / f"{Path(path).stem}.bin", deproject(res))
    _provenance(cfg, "reconstruct", out, seg_mask=bool(args.seg_mask), phase=state.phase)
    return {"command": "reconstruct", "scans": len(items), "seg_mask": bool(args.seg_mask), "out": str(out)}


def cmd_eval_recon(args, cfg: RunConfig):
    out = _out(args)
    pairs = []
    if args.manifest:
        for p in read_manifest_resolved(args.manifest).pairs:
            stem = Path(p.dynamic_ref).stem
            pairs.append((f"{stem}_{Path(p.static_ref).stem}", Path(args.pred_dir) / f"{stem}.rimg",
                          Path(p.transformed_ref)))
    else:
        if not args.gt_dir:
            raise UsageError("eval-recon needs GT_DIR or --manifest")
        for f in sorted(Path(args.pred_dir).glob("*.rimg")):
            pairs.append((f.stem, f, Path(args.gt_dir) / f.name))
    if not pairs:
        raise ValueError("nothing to evaluate")
    preds = [read_rimg(p)[0] for _, p, _ in pairs]
    gts = [read_rimg(g)[0] for _, _, g in pairs]
    scores = [None] * len(preds)
    if args.lqi:
        model = lqi_from_bytes(Path(args.lqi).read_bytes(), source=args.lqi)
        scores = list(lqi_scores(model, preds))
    emd_cap = cfg.section("eval")["emd_cap"]
    rows = evaluate_batch(((sid, deproject(p), deproject(g), q) for (sid, _, _), p, g, q
                           in zip(pairs, preds, gts, scores)), threads=cfg.threads, emd_cap=emd_cap, seed=cfg.seed)
    csv_path = out / (args.name or "eval_recon.csv")
    atomic_write_text(csv_path, format_eval_csv(rows))
    _provenance(cfg, "eval-recon", csv_path)
    cd = np.array([r["cd_normalized"] for r in rows])
    return {"command": "eval-recon", "scans": len(rows), "median_cd_normalized": float(np.median(cd)),
            "median_emd": float(np.median([r["emd"] for r in rows])), "csv": str(csv_path)}


def cmd_eval_traj(args, cfg: RunConfig):
    out = _out(args)
    est, gt = read_tum(args.estimate), read_tum(args.groundtruth)
    align = not args.no_align
    rt, rr = rpe(est, gt, delta=args.delta, max_dt=args.max_dt)
    metrics = {"ate": ate(est, gt, align=align, max_dt=args.max_dt), "rpe_trans": rt, "rpe_rot_deg": rr,
               "drift": drift(est, gt, max_dt=args.max_dt)}
    text = "metric,value\n" + "".join(f"{k},{v!r}\n" for k, v in metrics.items())
    csv_path = out / "traj_metrics.csv"
    atomic_write_text(csv_path, text)
    _provenance(cfg, "eval-traj", csv_path, align=align, delta=args.delta)
    return {"command": "eval-traj", "align": align, "delta": args.delta, **metrics}


def cmd_noise_sweep(args, cfg: RunConfig):
    out = _out(args)
    sw = cfg.section("sweep")
    sigmas = [float(s) for s in args.sigmas.split(",")] if args.sigmas else list(sw["sigmas"])
    items = load_scans(args.scans)[:sw["max_scans"]]
    model = lqi_from_bytes(Path(args.lqi).read_bytes(), source=args.lqi)
    rows = noise_sweep([ri for _, ri, _ in items], sigmas, model, seeds=sw["seeds"],
                       scan_ids=[Path(p).stem for p, _, _ in items])
    files = write_sweep(out, rows)
    for f in files:
        _provenance(cfg, "noise-sweep", f)
    s = summarize(rows)
    return {"command": "noise-sweep", "rows": len(rows), "spearman_lqi_cd": s["spearman_lqi_cd"],
            "spearman_sigma_lqi": s["spearman_sigma_lqi"], "csv": str(files[0])}


# -- argument parsing

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="sectioned key = value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    common.add_argument("--threads", type=int, help="evaluation worker threads")
    common.add_argument("--out", default=".", help="output directory (default: .)")

    parser = _Parser(prog="dslr", description="Dynamic-to-static LiDAR scan reconstruction toolkit.")
    parser.add_argument("--version", action="version", version=f"dslr {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="generate paired static/dynamic runs")
    p.add_argument("--target", action="store_true", help="also render a perturbed target-domain run")

    p = sub.add_parser("pair", parents=[common], help="build the paired-correspondence manifest")
    p.add_argument("dynamic_dir")
    p.add_argument("static_dir")
    p.add_argument("--delta-trans", type=float)
    p.add_argument("--delta-rot", type=float, help="degrees")
    p.add_argument("--mode", choices=("all_matches", "nearest_only"))
    p.add_argument("--refine-seg", action="store_true",
                   help="in-paint only dynamic cells of each dynamic scan from the aligned static scan")

    p = sub.add_parser("train", parents=[common], help="run one training phase")
    p.add_argument("phase", choices=("ae", "disc", "adv", "uda", "lqi"))
    p.add_argument("--manifest")
    p.add_argument("--val", help="held-out manifest for discriminator accuracy")
    p.add_argument("--ckpt-in")
    p.add_argument("--target", nargs="+", help="target-domain dynamic scans (uda)")
    p.add_argument("--scans", nargs="+", help="clean scans (lqi)")

    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct static scans")
    p.add_argument("checkpoint")
    p.add_argument("scans", nargs="*")
    p.add_argument("--manifest", help="reconstruct every dynamic scan listed in a manifest")
    p.add_argument("--seg-mask", action="store_true", help="keep input cells outside the dynamic mask")
    p.add_argument("--mask-dir", help="PBM masks named <scan>.pbm (default: mask plane in the scan file)")

    p = sub.add_parser("eval-recon", parents=[common], help="Chamfer/EMD/LQI of reconstructions")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir", nargs="?")
    p.add_argument("--manifest", help="pair predictions with aligned static scans from a manifest")
    p.add_argument("--lqi", help="quality-model checkpoint")
    p.add_argument("--name", help="CSV file name (default eval_recon.csv)")

    p = sub.add_parser("eval-traj", parents=[common], help="ATE/RPE/drift of a trajectory")
    p.add_argument("estimate")
    p.add_argument("groundtruth")
    p.add_argument("--delta", type=int, default=1)
    p.add_argument("--no-align", action="store_true")
    p.add_argument("--max-dt", type=float, default=0.02)

    p = sub.add_parser("noise-sweep", parents=[common], help="CD and LQI under injected noise")
    p.add_argument("scans", nargs="+")
    p.add_argument("--lqi", required=True)
    p.add_argument("--sigmas", help="comma-separated sigma grid (normalized range)")
    return parser


COMMANDS = {"simulate": cmd_simulate, "pair": cmd_pair, "train": cmd_train, "reconstruct": cmd_reconstruct,
            "eval-recon": cmd_eval_recon, "eval-traj": cmd_eval_traj, "noise-sweep": cmd_noise_sweep}


def _fail(code, kind, message):
    msg = " ".join(str(message).split())
    print(f"dslr: error code={code} kind={kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    level = os.environ.get("DSLR_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a command is required")
        overrides = {}
        if args.seed is not None:
            overrides[("run", "seed")] = args.seed
        if args.threads is not None:
            overrides[("run", "threads")] = args.threads
        cfg = RunConfig.load(args.config, overrides)
        log.info("resolved config %s", json.dumps(cfg.values, sort_keys=True))
        _emit(COMMANDS[args.command](args, cfg))
        return 0
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except TrainingDiverged as exc:
        return _fail(EXIT_DIVERGED, "divergence", exc)
    except (PhaseOrderError, AssociationError, ValueError, struct.error) as exc:
        return _fail(EXIT_VALIDATION, "validation", exc)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc)


if __name__ == "__main__":
    sys.exit(main())
