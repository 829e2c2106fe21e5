"""Command line entry point: generate, train, refine, eval and sweep."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from s4mc.config import ConfigError, SweepSpec, apply_sweep_value, load_config
from s4mc.experiment import Dataset, ExperimentConfig, run_experiment, scene_seed, split_names
from s4mc.metrics import boundary_iou, miou, write_metrics_csv
from s4mc.refinement import refine_probs
from s4mc.sim.model import ModelParams, NumericFailure, model_forward
from s4mc.sim.scenes import Scene, generate_scene
from s4mc.sim.trainer import Mode
from s4mc.tensor_core import ProbMap
from s4mc.tensor_io import load_float_tensor, load_label_mask, save_float_tensor, save_label_mask

MANIFEST = "manifest.json"
SWEEP_COLUMNS = ("axis", "value", "runs", "failed", "miou_mean", "miou_std")


class CliError(Exception):
    pass


def _scene_paths(out_dir: Path, index: int) -> tuple[Path, Path]:
    return out_dir / f"scene_{index:04d}_features.s4t", out_dir / f"scene_{index:04d}_mask.s4t"


def cmd_generate(cfg: ExperimentConfig, out_dir, seed: int) -> Path:
    """Write every scene of the run (train and validation) plus a split manifest."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out_dir}: {exc.strerror}") from None
    split = split_names(cfg)
    files = {}
    for name, indices in split.items():
        files[name] = []
        for i in indices:
            scene = generate_scene(cfg.scene, scene_seed(seed, i))
            feat_path, mask_path = _scene_paths(out_dir, i)
            try:
                save_float_tensor(feat_path, scene.features)
                save_label_mask(mask_path, scene.mask)
            except OSError as exc:
                raise CliError(f"cannot write {feat_path}: {exc.strerror}") from None
            files[name].append({"index": i, "features": feat_path.name, "mask": mask_path.name})
    manifest = {
        "seed": seed,
        "classes": cfg.scene.classes,
        "feature_dim": cfg.scene.feature_dim,
        "n_scenes": cfg.n_scenes,
        "n_labeled": cfg.n_labeled,
        "labeled_fraction": cfg.labeled_fraction,
        "splits": files,
    }
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(data_dir) -> tuple[Dataset, dict]:
    data_dir = Path(data_dir)
    path = data_dir / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None

    def scenes(name):
        out = []
        for entry in manifest["splits"][name]:
            try:
                feats = load_float_tensor(data_dir / entry["features"])
                mask = load_label_mask(data_dir / entry["mask"])
            except OSError as exc:
                raise CliError(f"cannot read scene {entry['index']} in {data_dir}: {exc.strerror}") from None
            out.append(Scene(feats, mask))
        return out

    return Dataset(scenes("labeled"), scenes("unlabeled"), scenes("val")), manifest


def cmd_train(cfg: ExperimentConfig, seed: int, out_dir, data_dir=None) -> tuple[Path, Path]:
    """Train one run; writes ``metrics.csv`` and ``params.s4t`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = None
    if data_dir is not None:
        dataset, manifest = load_dataset(data_dir)
        if manifest["classes"] != cfg.scene.classes or manifest["feature_dim"] != cfg.scene.feature_dim:
            raise CliError(f"dataset in {data_dir} does not match the [scene] config")
    csv_path = out_dir / "metrics.csv"
    params_path = out_dir / "params.s4t"
    try:
        result = run_experiment(cfg, seed, dataset)
    except NumericFailure as exc:
        rows = list(getattr(exc, "rows", []))
        write_metrics_csv(csv_path, rows)
        raise CliError(f"numeric failure: {exc} (rows logged so far in {csv_path})") from None
    write_metrics_csv(csv_path, result.rows)
    save_float_tensor(params_path, result.params.weights)
    last = result.rows[-1]
    if not (math.isfinite(last.loss_s) and math.isfinite(last.loss_u)):
        raise CliError("final loss is not finite")
    return csv_path, params_path


def cmd_refine(cfg: ExperimentConfig, in_path, out_path) -> Path:
    """Refine a stored ``(H, W, C)`` or ``(B, H, W, C)`` probability tensor."""
    probs = load_float_tensor(in_path)
    if probs.ndim == 3:
        ProbMap(probs, normalized=True)  # validates the map
    rate = cfg.refine.colabel_rate
    refine_cfg = dataclasses.replace(cfg.refine, enabled=True).resolve(rate)
    if refine_cfg.joint.colabel_rate is None and refine_cfg.joint.kind.value != "independence":
        raise CliError("empirical joints need refine.colabel_rate in the config for standalone refinement")
    out = refine_probs(probs.astype(np.float64), refine_cfg)
    save_float_tensor(out_path, out)
    return Path(out_path)


def cmd_eval(pred, gt, classes: int, dilation: int = 2) -> dict:
    return {"miou": miou(pred, gt, classes), "boundary_iou": boundary_iou(pred, gt, dilation, classes)}


def _run_one(job):
    cfg, seed, run_dir = job
    try:
        csv_path, _ = cmd_train(cfg, seed, run_dir)
        return seed, _final_miou(csv_path), ""
    except (CliError, ValueError, ArithmeticError) as exc:
        return seed, math.nan, str(exc)


def _final_miou(csv_path) -> float:
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return float(rows[-1]["miou_val"])


def worker_count(requested: bool, n_jobs: int) -> int:
    if not requested:
        return 1
    cap = os.environ.get("S4MC_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


def cmd_sweep(cfg: ExperimentConfig, sweep: SweepSpec, out_dir, parallel: bool = False) -> Path:
    """One training run per (value, seed); aggregates final validation mIoU per value."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for value in sweep.values:
        run_cfg = apply_sweep_value(cfg, sweep.axis, value)
        for seed in run_cfg.seeds:
            safe = value.replace(":", "-")
            jobs.append((value, (run_cfg, seed, out_dir / f"{sweep.axis}={safe}" / f"seed{seed}")))
    workers = worker_count(parallel, len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, [j for _, j in jobs]))
    else:
        outcomes = [_run_one(j) for _, j in jobs]

    failures = []
    summary = []
    for value in sweep.values:
        scores = []
        n_runs = 0
        for (v, _), (seed, score, err) in zip(jobs, outcomes):
            if v != value:
                continue
            n_runs += 1
            if err:
                failures.append({"value": value, "seed": seed, "error": err})
            else:
                scores.append(score)
        arr = np.array(scores, dtype=np.float64)
        summary.append(
            {
                "axis": sweep.axis,
                "value": value,
                "runs": n_runs,
                "failed": n_runs - len(scores),
                "miou_mean": repr(float(arr.mean())) if len(arr) else "nan",
                "miou_std": repr(float(arr.std())) if len(arr) else "nan",
            }
        )
    path = out_dir / "sweep.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(summary)
    if failures:
        with open(out_dir / "failures.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=("value", "seed", "error"), lineterminator="\n")
            writer.writeheader()
            writer.writerows(failures)
    return path


def _load(args) -> tuple[ExperimentConfig, SweepSpec | None]:
    if args.config:
        cfg, sweep = load_config(args.config)
    else:
        cfg, sweep = ExperimentConfig(), None
    if getattr(args, "no_refine", False):
        cfg = cfg.with_changes(refine=dataclasses.replace(cfg.refine, enabled=False))
    if getattr(args, "mode", None):
        cfg = cfg.with_changes(train=dataclasses.replace(cfg.train, mode=Mode(args.mode)))
    train_changes = {}
    if getattr(args, "alpha0", None) is not None:
        train_changes["alpha0"] = args.alpha0
    if getattr(args, "total_iters", None) is not None:
        train_changes["total_iters"] = args.total_iters
    if train_changes:
        cfg = cfg.with_changes(train=dataclasses.replace(cfg.train, **train_changes))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_changes(seeds=(args.seed,))
    return cfg, sweep


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s4mc", description="Neighborhood-refined pseudo labels on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="run seed (overrides [experiment] seeds)")
        p.add_argument("--no-refine", action="store_true", help="disable pseudo-label refinement")
        p.add_argument("--mode", choices=[m.value for m in Mode], help="training scheme")
        p.add_argument("--out", required=True, help=out_help)

    def schedule(p):
        p.add_argument("--alpha0", type=float, help="initial quantile level of the threshold schedule")
        p.add_argument("--total-iters", type=int, help="training iterations")

    common(sub.add_parser("generate", help="write scenes and a split manifest"), "output directory")
    p = sub.add_parser("train", help="train one run")
    common(p, "output directory for metrics.csv and params.s4t")
    schedule(p)
    p.add_argument("--data", help="dataset directory from 'generate' (default: generate in memory)")
    p = sub.add_parser("refine", help="refine a stored probability tensor")
    common(p, "output tensor file")
    p.add_argument("--input", required=True, help="probability tensor (H, W, C)")
    p = sub.add_parser("eval", help="mIoU and boundary IoU")
    common(p, "output JSON file")
    p.add_argument("--pred", help="predicted label mask file")
    p.add_argument("--gt", help="ground-truth label mask file")
    p.add_argument("--params", help="trained params file; evaluated on --data's validation split")
    p.add_argument("--data", help="dataset directory from 'generate'")
    p.add_argument("--dilation", type=int, default=2, help="boundary band half-width in pixels")
    p = sub.add_parser("sweep", help="ablation sweep over one axis")
    common(p, "output directory")
    schedule(p)
    p.add_argument("--axis", help="override [sweep] axis")
    p.add_argument("--values", help="override [sweep] values (comma separated)")
    p.add_argument("--parallel", action="store_true", help="run independent jobs in worker processes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, sweep = _load(args)
        seed = cfg.seeds[0]
        if args.command == "generate":
            print(cmd_generate(cfg, args.out, seed))
        elif args.command == "train":
            csv_path, params_path = cmd_train(cfg, seed, args.out, args.data)
            print(csv_path)
            print(params_path)
        elif args.command == "refine":
            print(cmd_refine(cfg, args.input, args.out))
        elif args.command == "eval":
            result = _eval_from_args(args, cfg)
            Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
            print(json.dumps(result, sort_keys=True))
        elif args.command == "sweep":
            if args.axis or args.values:
                axis = args.axis or (sweep.axis if sweep else "")
                values = tuple(v.strip() for v in (args.values or "").split(",") if v.strip())
                sweep = SweepSpec(axis, values or (sweep.values if sweep else ()))
            if sweep is None:
                raise ConfigError("sweep needs a [sweep] section or --axis/--values")
            print(cmd_sweep(cfg, sweep, args.out, args.parallel))
    except (CliError, ConfigError, ValueError) as exc:
        print(f"s4mc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def _eval_from_args(args, cfg: ExperimentConfig) -> dict:
    classes = cfg.scene.classes
    if args.params:
        if not args.data:
            raise CliError("--params needs --data")
        dataset, manifest = load_dataset(args.data)
        feats, masks = Dataset.stack(dataset.val)
        params = ModelParams(load_float_tensor(args.params))
        pred = model_forward(params, feats, cfg.train.patch).argmax(axis=-1)
        return cmd_eval(pred, masks, manifest["classes"], args.dilation)
    if not (args.pred and args.gt):
        raise CliError("eval needs --pred and --gt, or --params and --data")
    return cmd_eval(load_label_mask(args.pred), load_label_mask(args.gt), classes, args.dilation)


if __name__ == "__main__":
    sys.exit(main())
