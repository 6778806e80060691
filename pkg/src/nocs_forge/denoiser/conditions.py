"""Conditioning inputs and their null encodings.

A missing or dropped modality is an all-zero map of its usual shape; a
missing category is id 0. One network therefore accepts any subset of
``normal``, ``rgb``, ``feat`` and ``category``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

MODALITIES = ("normal", "rgb", "feat", "category")


@dataclass(frozen=True)
class ConditionSet:
    normal: np.ndarray | None = None  # (H, W, 3)
    rgb: np.ndarray | None = None  # (H, W, 3)
    feat: np.ndarray | None = None  # (H, W, M)
    category: int | None = None
    mask: np.ndarray | None = None  # object mask in the same frame; not a network input

    def __post_init__(self):
        shapes = {m.shape[:2] for m in (self.normal, self.rgb, self.feat, self.mask) if m is not None}
        if len(shapes) > 1:
            raise ValueError(f"conditioning maps disagree in size: {sorted(shapes)}")
        if self.category is not None and self.category < 0:
            raise ValueError("category ids are non-negative")

    @property
    def present(self) -> frozenset[str]:
        return frozenset(m for m in MODALITIES if getattr(self, m) is not None)

    def select(self, modalities) -> "ConditionSet":
        """Keep only ``modalities``; the rest become null."""
        keep = set(modalities)
        unknown = keep - set(MODALITIES)
        if unknown:
            raise ValueError(f"unknown modalities {sorted(unknown)}")
        return replace(self, **{m: None for m in MODALITIES if m not in keep})


def all_subsets() -> list[frozenset[str]]:
    """The 16 subsets of the four modalities, smallest first."""
    return [frozenset(c) for r in range(len(MODALITIES) + 1) for c in combinations(MODALITIES, r)]


def stack_conditions(conds: list[ConditionSet], size: int, feat_channels: int) -> tuple[np.ndarray, np.ndarray]:
    """Network image channels ``(B, 6 + M, H, W)`` and category ids ``(B,)``."""
    img = np.zeros((len(conds), 6 + feat_channels, size, size), dtype=np.float32)
    cats = np.zeros(len(conds), dtype=np.int64)
    for i, c in enumerate(conds):
        if c.normal is not None:
            img[i, 0:3] = np.moveaxis(c.normal, -1, 0)
        if c.rgb is not None:
            img[i, 3:6] = np.moveaxis(c.rgb, -1, 0)
        if c.feat is not None and feat_channels:
            if c.feat.shape[-1] > feat_channels:
                raise ValueError(f"feature map has {c.feat.shape[-1]} channels, network takes {feat_channels}")
            img[i, 6 : 6 + c.feat.shape[-1]] = np.moveaxis(c.feat, -1, 0)
        if c.category is not None:
            cats[i] = c.category
    return img, cats
