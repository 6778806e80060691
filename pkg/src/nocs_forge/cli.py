"""Command-line entry point: ``nocs-forge {render,train,infer,eval,plot}``.

Every option can also come from a JSON file given with ``--config``; flags on
the command line win. The root seed falls back to ``NOCS_FORGE_SEED`` and then 0.
Exit codes: 0 success, 2 invalid configuration or input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__, tnsr
from .core import CameraIntrinsics, SimilarityPose
from .datagen.dataset_io import DatasetError, read_dataset, view_stem, write_dataset
from .datagen.generate import generate_views
from .datagen.meshes import CATEGORIES
from .denoiser import checkpoint as ckpt
from .denoiser.conditions import MODALITIES
from .denoiser.network import DenoiserConfig
from .denoiser.training import LOSS_WEIGHTINGS, TrainConfig, TrainingDiverged, net_from_checkpoint, train
from .evaluation import (
    CATEGORY_SYMMETRY, DEFAULT_THRESHOLDS, SymmetryClass, make_record, map_at, write_overlay, write_sphere_plot,
    write_table,
)
from .benchmark import EvalSettings, grid, infer_view
from .pipeline.estimate import complete_cloud, infer_detection, read_detections

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
SEED_ENV = "NOCS_FORGE_SEED"


class ConfigError(ValueError):
    pass


# --- configuration -----------------------------------------------------------

def _csv_ints(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


def _csv_strs(text: str) -> list[str]:
    return [x.strip() for x in str(text).split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nocs-forge", description="Diffusion-based NOCS pose estimation toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        # defaults are None so that unset flags fall through to the config file
        sp.add_argument("--config", type=Path, help="JSON file of option values; flags override it")
        sp.add_argument("--seed", type=int, default=None, help=f"root seed (env {SEED_ENV}, else 0)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        return sp

    r = common(sub.add_parser("render", help="render a synthetic dataset"))
    r.add_argument("--out", type=Path)
    r.add_argument("--categories", type=_csv_strs, help="comma-separated built-in categories")
    r.add_argument("--instances", type=int)
    r.add_argument("--subdiv", type=int, help="icosphere subdivisions (0: 12 views, 2: 162)")
    r.add_argument("--image-size", type=int)

    t = common(sub.add_parser("train", help="train the denoiser on a dataset"))
    t.add_argument("--data", type=Path)
    t.add_argument("--out", type=Path, help="checkpoint path")
    t.add_argument("--resume", type=Path, help="checkpoint to continue from")
    t.add_argument("--steps", type=int)
    t.add_argument("--stop-at", type=int, help="end early after this many steps; continue later with --resume")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--p-drop", type=float)
    t.add_argument("--loss-weighting", help=f"one of {','.join(LOSS_WEIGHTINGS)}")
    t.add_argument("--pca-dim", type=int)
    t.add_argument("--crop-size", type=int)
    t.add_argument("--base-width", type=int)
    t.add_argument("--no-augment", action="store_true", default=None)
    t.add_argument("--loss-csv", type=Path)

    i = common(sub.add_parser("infer", help="estimate poses"))
    i.add_argument("--checkpoint", type=Path)
    i.add_argument("--data", type=Path, help="dataset to run on (ground-truth masks as detections)")
    i.add_argument("--depth", type=Path, help="16-bit depth PNG in millimeters (single-image mode)")
    i.add_argument("--rgb", type=Path)
    i.add_argument("--intrinsics", type=Path, help="JSON intrinsics (single-image mode)")
    i.add_argument("--detections", type=Path, help='JSON list [{"box": [x0, y0, x1, y1], "category": id}]')
    i.add_argument("--mask", type=Path, help="TNSR object mask (single-image mode)")
    i.add_argument("--features", type=Path, help="TNSR (H, W, C) feature map replacing the stub extractor")
    i.add_argument("--modalities", type=_csv_strs, help=f"subset of {','.join(MODALITIES)}")
    i.add_argument("--n-noise", type=int)
    i.add_argument("--steps", type=int)
    i.add_argument("--out", type=Path, help="pose JSON")
    i.add_argument("--cloud-dir", type=Path, help="write completed point clouds (PLY)")
    i.add_argument("--plots", type=Path, help="write sphere and overlay plots")

    e = common(sub.add_parser("eval", help="score predictions or run the ablation grid"))
    e.add_argument("--predictions", type=Path)
    e.add_argument("--data", type=Path)
    e.add_argument("--out", type=Path)
    e.add_argument("--grid", action="store_true", default=None)
    e.add_argument("--checkpoint", type=Path)
    e.add_argument("--noises", type=_csv_ints)
    e.add_argument("--pcas", type=_csv_ints)
    e.add_argument("--steps", type=int)

    pl = common(sub.add_parser("plot", help="plots from a prediction file"))
    pl.add_argument("--predictions", type=Path)
    pl.add_argument("--data", type=Path)
    pl.add_argument("--out", type=Path)
    return p


DEFAULTS = {
    "render": {"out": None, "categories": list(CATEGORIES), "instances": 1, "subdiv": 2, "image_size": 64},
    "train": {
        "data": None, "out": None, "resume": None, "steps": 6000, "stop_at": None, "batch_size": 16, "lr": 2e-4, "p_drop": 0.25, "loss_weighting": "eps",
        "pca_dim": 6, "crop_size": 32, "base_width": 32, "no_augment": False, "loss_csv": None,
    },
    "infer": {
        "checkpoint": None, "data": None, "depth": None, "rgb": None, "intrinsics": None, "detections": None,
        "mask": None, "features": None, "modalities": list(MODALITIES), "n_noise": 6, "steps": 10, "out": None,
        "cloud_dir": None, "plots": None,
    },
    "eval": {
        "predictions": None, "data": None, "out": None, "grid": False, "checkpoint": None, "noises": [1, 3, 6],
        "pcas": [3, 6], "steps": 10,
    },
    "plot": {"predictions": None, "data": None, "out": None},
}
PATH_KEYS = {"out", "data", "resume", "loss_csv", "checkpoint", "depth", "rgb", "intrinsics", "detections", "mask",
             "features", "cloud_dir", "plots", "predictions"}


def resolve(args: argparse.Namespace, env=os.environ) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(data) - set(cfg) - {"seed", "threads"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg.update(data)
    for key in list(cfg) + ["seed", "threads"]:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg.get("seed") is None:
        raw = env.get(SEED_ENV)
        try:
            cfg["seed"] = int(raw) if raw not in (None, "") else 0
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc
    cfg.setdefault("threads", None)
    for key in PATH_KEYS & set(cfg):
        if cfg[key] is not None:
            cfg[key] = Path(cfg[key])
    validate(args.command, cfg)
    return cfg


def validate(command: str, cfg: dict) -> None:
    def need(*keys):
        for k in keys:
            if cfg.get(k) is None:
                raise ConfigError(f"{command} needs --{k.replace('_', '-')}")

    def positive(*keys):
        for k in keys:
            if cfg.get(k) is not None and cfg[k] < 1:
                raise ConfigError(f"{k} must be >= 1, got {cfg[k]}")

    if cfg.get("threads") is not None and cfg["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if command == "render":
        need("out")
        unknown = set(cfg["categories"]) - set(CATEGORIES)
        if unknown or not cfg["categories"]:
            raise ConfigError(f"categories must be drawn from {CATEGORIES}")
        positive("instances", "image_size")
        if not 0 <= cfg["subdiv"] <= 4:
            raise ConfigError("subdiv must lie in [0, 4]")
    elif command == "train":
        need("data", "out")
        positive("steps", "batch_size", "pca_dim", "crop_size", "base_width", "stop_at")
        if not 0.0 <= cfg["p_drop"] < 1.0:
            raise ConfigError("p_drop must lie in [0, 1)")
        if cfg["lr"] <= 0:
            raise ConfigError("lr must be positive")
        if cfg["loss_weighting"] not in LOSS_WEIGHTINGS:
            raise ConfigError(f"loss_weighting must be one of {LOSS_WEIGHTINGS}")
    elif command == "infer":
        need("checkpoint", "out")
        positive("n_noise", "steps")
        bad = set(cfg["modalities"]) - set(MODALITIES)
        if bad:
            raise ConfigError(f"unknown modalities {sorted(bad)}")
        if cfg["data"] is None and (cfg["depth"] is None or cfg["intrinsics"] is None or cfg["detections"] is None):
            raise ConfigError("infer needs --data, or --depth with --intrinsics and --detections")
    elif command == "eval":
        need("data", "out")
        if cfg["grid"]:
            need("checkpoint")
            positive("steps")
            if not cfg["noises"] or not cfg["pcas"] or min(cfg["noises"] + cfg["pcas"]) < 1:
                raise ConfigError("grid axes must be non-empty positive integers")
        else:
            need("predictions")
    elif command == "plot":
        need("predictions", "data", "out")


def provenance(command: str, cfg: dict, checkpoint_path: Path | None = None) -> dict:
    canon = json.dumps({k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(cfg.items())}, sort_keys=True)
    block = {
        "command": command,
        "version": __version__,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest()[:16],
        "seed": cfg["seed"],
        "checkpoint_hash": ckpt.file_hash(checkpoint_path) if checkpoint_path is not None else None,
    }
    print(json.dumps({"provenance": block}, sort_keys=True), flush=True)
    return block


def _threads(n: int | None) -> None:
    import torch

    torch.set_num_threads(n or os.cpu_count() or 1)


# --- commands ------------------------------------------------------------------

def cmd_render(cfg: dict) -> int:
    views = generate_views(cfg["categories"], cfg["instances"], cfg["subdiv"], cfg["image_size"], cfg["seed"])
    root = write_dataset(views, cfg["out"], cfg["categories"])
    prov = provenance("render", cfg)
    (root / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(views)} views to {root}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    ds = read_dataset(cfg["data"])
    arch = DenoiserConfig(base=cfg["base_width"], feat_channels=cfg["pca_dim"], n_categories=len(ds.categories))
    tc = TrainConfig(
        steps=cfg["steps"], batch_size=cfg["batch_size"], lr=cfg["lr"], p_drop=cfg["p_drop"], seed=cfg["seed"],
        crop_size=cfg["crop_size"], augment=not cfg["no_augment"], loss_weighting=cfg["loss_weighting"],
    )
    resume = ckpt.load(cfg["resume"]) if cfg["resume"] is not None else None

    def report(step, value, _):
        if step % 100 == 0 or step == tc.steps - 1:
            print(f"step {step} loss {value:.5f}", flush=True)

    result = train(ds.views, arch, tc, resume=resume, stop_at=cfg["stop_at"], on_step=report)
    ck = result.checkpoint
    prov = provenance("train", cfg)
    ck.meta = {"provenance": prov, "categories": ds.categories}
    out = ckpt.save(ck, cfg["out"])
    loss_csv = cfg["loss_csv"] or out.with_suffix(".loss.csv")
    with open(loss_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        w.writerows(enumerate(ck.losses))
    print(f"checkpoint {out} ({ckpt.file_hash(out)})")
    return EXIT_OK


def _load_checkpoint(path: Path):
    try:
        ck = ckpt.load(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"missing checkpoint {path}") from exc
    return ck, net_from_checkpoint(ck)


def _write_ply(points: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    head = f"ply\nformat ascii 1.0\nelement vertex {len(points)}\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
    path.write_text(head + "".join(f"{x:.6f} {y:.6f} {z:.6f}\n" for x, y, z in points))


def _load_png(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path))


def cmd_infer(cfg: dict) -> int:
    ck, net = _load_checkpoint(cfg["checkpoint"])
    prov = provenance("infer", cfg, cfg["checkpoint"])
    crop = ck.train_config.get("crop_size", 32)
    settings = EvalSettings(cfg["n_noise"], cfg["steps"], None, tuple(cfg["modalities"]), cfg["seed"])
    records = []
    if cfg["data"] is not None:
        ds = read_dataset(cfg["data"])
        for idx, view in enumerate(ds.views):
            res = infer_view(net, ck, view, idx, settings)
            records.append(({"view": view_stem(ds.categories, view), **res.to_dict()}, res, view.rgb, ds.intrinsics))
    else:
        k = CameraIntrinsics.from_dict(json.loads(cfg["intrinsics"].read_text()))
        depth = _load_png(cfg["depth"]).astype(np.float64) / 1000.0
        rgb = _load_png(cfg["rgb"])[..., :3] / 255.0 if cfg["rgb"] is not None else None
        mask = tnsr.load(cfg["mask"]).astype(bool) if cfg["mask"] is not None else None
        feats = tnsr.load(cfg["features"]).astype(np.float64) if cfg["features"] is not None else None
        for idx, det in enumerate(read_detections(cfg["detections"])):
            res = infer_detection(
                net, depth, det, k, rgb=rgb, mask=mask, pca=ck.pca, features=feats, modalities=settings.modalities,
                n_noise=settings.n_noise, steps=settings.steps, seed=cfg["seed"] + idx, crop_size=crop,
            )
            records.append(({"view": f"detection/{idx:03d}", **res.to_dict()}, res, rgb, k))
    out = cfg["out"]
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"provenance": prov, "records": [r for r, *_ in records]}, indent=1, sort_keys=True) + "\n")
    for rec, res, rgb, k in records:
        name = rec["view"].replace("/", "_")
        if cfg["cloud_dir"] is not None:
            _write_ply(complete_cloud(res.best.nocs, res.best.pose).points, cfg["cloud_dir"] / f"{name}.ply")
        if cfg["plots"] is not None:
            write_sphere_plot([h.pose.rotation for h in res.hypotheses], cfg["plots"] / f"{name}_sphere")
            if rgb is not None:
                write_overlay(rgb, res.best.pose, k, cfg["plots"] / f"{name}_overlay.png")
    print(f"wrote {len(records)} records to {out}")
    return EXIT_OK


def _predictions(path: Path) -> list[dict]:
    try:
        data = json.loads(Path(path).read_text())
        return data["records"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read predictions {path}: {exc}") from exc


def cmd_eval(cfg: dict) -> int:
    ds = read_dataset(cfg["data"])
    if cfg["grid"]:
        ck, net = _load_checkpoint(cfg["checkpoint"])
        prov = provenance("eval", cfg, cfg["checkpoint"])
        rows = grid(net, ck, ds.views, ds.categories, tuple(cfg["noises"]), tuple(cfg["pcas"]), cfg["seed"], cfg["steps"])
        write_table(rows, cfg["out"], prov)
        print(f"wrote {len(rows)} grid cells to {cfg['out']}")
        return EXIT_OK
    prov = provenance("eval", cfg)
    preds = _predictions(cfg["predictions"])
    gt = {view_stem(ds.categories, v): v for v in ds.views}
    if len(preds) != len(gt) or {p["view"] for p in preds} != set(gt):
        raise ConfigError(f"{len(preds)} predictions do not match the {len(gt)} dataset views")
    records = []
    for p in preds:
        v = gt[p["view"]]
        name = ds.category_name(v.category)
        records.append(make_record(name, v.pose, SimilarityPose.from_dict(p["pose"]), CATEGORY_SYMMETRY.get(name, SymmetryClass())))
    cats = sorted({r.category for r in records})
    rows = []
    per = [map_at(records, n, m) for n, m in DEFAULT_THRESHOLDS]
    for c in cats + ["mean"]:
        vals = [(p[1] if c == "mean" else p[0][c]) for p in per]
        rows.append([c] + [f"{x:.6f}" for x in vals])
    out = cfg["out"]
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "map_5_5", "map_10_5", "map_15_5"])
        w.writerows(rows)
    out.with_suffix(".provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
    print(f"wrote metrics for {len(records)} records to {out}")
    return EXIT_OK


def cmd_plot(cfg: dict) -> int:
    ds = read_dataset(cfg["data"])
    provenance("plot", cfg)
    gt = {view_stem(ds.categories, v): v for v in ds.views}
    n = 0
    for p in _predictions(cfg["predictions"]):
        name = p["view"].replace("/", "_")
        rots = [SimilarityPose.from_dict(h["pose"]).rotation for h in p.get("hypotheses", [])]
        write_sphere_plot(rots, cfg["out"] / f"{name}_sphere")
        view = gt.get(p["view"])
        if view is not None:
            write_overlay(view.rgb, SimilarityPose.from_dict(p["pose"]), ds.intrinsics, cfg["out"] / f"{name}_overlay.png")
        n += 1
    print(f"wrote plots for {n} records to {cfg['out']}")
    return EXIT_OK


COMMANDS = {"render": cmd_render, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "plot": cmd_plot}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on bad usage
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        _threads(cfg["threads"])
        return COMMANDS[args.command](cfg)
    except (ConfigError, DatasetError, ckpt.CheckpointError, tnsr.TnsrError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDiverged, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
