"""The two-category toy benchmark: training views, held-out views and the recorded budget."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .datagen.generate import generate_views
from .datagen.render import RenderedView
from .denoiser import checkpoint
from .denoiser.checkpoint import Checkpoint
from .denoiser.network import DenoiserConfig
from .denoiser.training import TrainConfig, train

TOY_CATEGORIES = ("cylinder", "cone")
REPO_ROOT = Path(__file__).resolve().parents[2]
TOY_CONFIG = REPO_ROOT / "configs" / "toy_train.json"
TOY_CHECKPOINT = REPO_ROOT / "artifacts" / "toy_denoiser.nfck"


@dataclass(frozen=True)
class ToySpec:
    train_instances: int = 6
    heldout_instances: int = 2
    subdivisions: int = 2
    image_size: int = 64
    data_seed: int = 7
    heldout_views: int = 20
    heldout_seed: int = 11

    @classmethod
    def from_dict(cls, d: dict) -> "ToySpec":
        return cls(**d)


def load_toy_config(path=TOY_CONFIG) -> tuple[ToySpec, DenoiserConfig, TrainConfig]:
    d = json.loads(Path(path).read_text())
    return ToySpec.from_dict(d["data"]), DenoiserConfig.from_dict(d["architecture"]), TrainConfig.from_dict(d["training"])


def training_views(spec: ToySpec) -> list[RenderedView]:
    return generate_views(list(TOY_CATEGORIES), spec.train_instances, spec.subdivisions, spec.image_size, spec.data_seed)


def heldout_views(spec: ToySpec) -> list[RenderedView]:
    """Views of instances never seen in training, an equal number per category."""
    views = generate_views(
        list(TOY_CATEGORIES), spec.heldout_instances, spec.subdivisions, spec.image_size,
        spec.data_seed, first_instance=spec.train_instances,
    )
    rng = np.random.default_rng(spec.heldout_seed)
    per_cat = spec.heldout_views // len(TOY_CATEGORIES)
    chosen = []
    for cid in range(1, len(TOY_CATEGORIES) + 1):
        pool = [v for v in views if v.category == cid]
        chosen += [pool[i] for i in sorted(rng.choice(len(pool), size=per_cat, replace=False))]
    return chosen


def train_toy(out=TOY_CHECKPOINT, log: Callable[[str], None] = print, checkpoint_every: int = 1000) -> Checkpoint:
    """Train the recorded toy configuration; writes the checkpoint and its loss curve next to ``out``.

    Intermediate checkpoints ``toy_denoiser.step{N}.nfck`` are written every
    ``checkpoint_every`` steps so a long run can be inspected.
    """
    out = Path(out)
    spec, arch, cfg = load_toy_config()
    views = training_views(spec)
    log(f"{len(views)} training views")
    start = time.time()

    def report(step, value, ck):
        if step % 50 == 0:
            log(f"step {step} loss {value:.4f} {time.time() - start:.0f}s")
        if ck is not None:
            checkpoint.save(ck, out.with_name(f"{out.stem}.step{ck.step}.nfck"))

    ck = train(views, arch, cfg, on_step=report, checkpoint_every=checkpoint_every).checkpoint
    ck.meta = {"seconds": round(time.time() - start, 1), "views": len(views)}
    checkpoint.save(ck, out)
    with open(out.with_name(f"{out.stem.replace('_denoiser', '')}_train_loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        w.writerows(enumerate(ck.losses))
    log(f"done in {time.time() - start:.0f}s")
    return ck


def load_or_train_toy(path=TOY_CHECKPOINT) -> Checkpoint:
    """The recorded toy checkpoint, training it first when it is missing."""
    path = Path(path)
    if not path.is_file():
        train_toy(path, checkpoint_every=0)
    return checkpoint.load(path)
