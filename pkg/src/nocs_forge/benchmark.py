"""Run the inference pipeline over rendered views and score it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen.render import RenderedView
from .denoiser.checkpoint import Checkpoint
from .denoiser.conditions import MODALITIES
from .denoiser.network import NocsUNet
from .evaluation import EvalRecord, ablation_grid, make_record
from .pipeline.estimate import DEFAULT_NOISES, DEFAULT_STEPS, InferenceResult, infer_detection
from .pipeline.warp import Detection
from .registration import RobustConfig


def view_seed(root: int, index: int) -> int:
    return int(np.random.SeedSequence([root, index]).generate_state(1)[0])


@dataclass(frozen=True)
class EvalSettings:
    n_noise: int = DEFAULT_NOISES
    steps: int = DEFAULT_STEPS
    pca_dim: int | None = None  # None: all components of the checkpoint
    modalities: tuple[str, ...] = MODALITIES
    seed: int = 0


def infer_view(net: NocsUNet, ck: Checkpoint, view: RenderedView, index: int, s: EvalSettings) -> InferenceResult:
    """Ground-truth mask and its box stand in for the detector."""
    pca = ck.pca
    if pca is not None and s.pca_dim is not None:
        if not 1 <= s.pca_dim <= pca.n_components:
            raise ValueError(f"PCA dimension {s.pca_dim} outside [1, {pca.n_components}]")
        pca = pca.truncated(s.pca_dim)
    det = Detection.from_mask(view.mask, view.category)
    return infer_detection(
        net, view.depth, det, view.intrinsics, rgb=view.rgb, mask=view.mask, pca=pca,
        modalities=s.modalities, n_noise=s.n_noise, steps=s.steps, seed=view_seed(s.seed, index),
        crop_size=ck.train_config.get("crop_size", 32), reg_cfg=RobustConfig(seed=view_seed(s.seed, index)),
    )


def evaluate_views(
    net: NocsUNet, ck: Checkpoint, views: list[RenderedView], categories, s: EvalSettings = EvalSettings()
) -> list[EvalRecord]:
    records = []
    for i, view in enumerate(views):
        res = infer_view(net, ck, view, i, s)
        records.append(make_record(categories[view.category - 1], view.pose, res.best.pose))
    return records


def grid(net, ck, views, categories, noises=(1, 3, 6), pcas=(3, 6), seed: int = 0, steps: int = DEFAULT_STEPS):
    def cell(noise, pca):
        return evaluate_views(net, ck, views, categories, EvalSettings(noise, steps, pca, MODALITIES, seed))

    return ablation_grid(cell, noises, pcas)
