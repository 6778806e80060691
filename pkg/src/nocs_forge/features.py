"""Dense feature maps: PCA reduction, nearest-neighbor resizing, and a stub extractor.

The stub extractor stands in for a pretrained vision backbone. Real features
exported elsewhere can be loaded from TNSR files (see :mod:`nocs_forge.tnsr`)
and pass through the same PCA path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STUB_CHANNELS = 16
_STUB_SEED = 20240214


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (C,)
    components: np.ndarray  # (M, C), orthonormal rows
    explained_variance: np.ndarray  # (M,)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]

    def truncated(self, m: int) -> "PcaModel":
        return PcaModel(self.mean, self.components[:m], self.explained_variance[:m])

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(np.asarray(d["mean"]), np.asarray(d["components"]), np.asarray(d["explained_variance"]))


def _pixels(samples) -> np.ndarray:
    mats = [np.asarray(f, dtype=np.float64).reshape(-1, np.shape(f)[-1]) for f in samples]
    if not mats:
        raise ValueError("PCA needs at least one feature map")
    return np.concatenate(mats, axis=0)


def fit_pca(samples, m: int = 6) -> PcaModel:
    """Top-``m`` principal directions of the pooled pixel features.

    ``samples`` is an iterable of ``(..., C)`` arrays; every leading index is a
    pixel. Each component's largest-magnitude entry is made positive.
    """
    x = _pixels(list(samples))
    n, c = x.shape
    if m > c:
        raise ValueError(f"cannot keep {m} components of {c}-channel features")
    if n < m or n == 0:
        raise ValueError(f"need at least {m} pixels, got {n}")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:m]
    idx = np.argmax(np.abs(comps), axis=1)
    comps = comps * np.sign(comps[np.arange(m), idx])[:, None]
    var = s[:m] ** 2 / max(n - 1, 1)
    return PcaModel(mean, comps, var)


def project(model: PcaModel, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != model.n_features:
        raise ValueError(f"feature map has {f.shape[-1]} channels, model expects {model.n_features}")
    return (f - model.mean) @ model.components.T


def reconstruct(model: PcaModel, z: np.ndarray) -> np.ndarray:
    return np.asarray(z) @ model.components + model.mean


def resize_nn(f: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbor resize with pixel-center alignment."""
    if h < 1 or w < 1:
        raise ValueError("target size must be positive")
    sh, sw = f.shape[:2]
    rows = np.minimum(((np.arange(h) + 0.5) * sh / h).astype(np.int64), sh - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * sw / w).astype(np.int64), sw - 1)
    return f[rows[:, None], cols[None, :]]


def _stub_kernels() -> np.ndarray:
    rng = np.random.default_rng(_STUB_SEED)
    return rng.integers(-8, 9, size=(STUB_CHANNELS, 5, 5, 3)).astype(np.int64)


_KERNELS = _stub_kernels()


def stub_extractor(rgb: np.ndarray) -> np.ndarray:
    """Deterministic 16-channel features from fixed integer 5x5 convolutions.

    The input is quantized to 8 bits and convolved in integer arithmetic
    (edge-replicated borders), then squashed with ``tanh``; the result is
    identical across runs and platforms up to the final transcendental.
    """
    img = np.clip(np.rint(np.asarray(rgb) * 255.0), 0, 255).astype(np.int64)
    h, w, _ = img.shape
    pad = np.pad(img, ((2, 2), (2, 2), (0, 0)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(pad, (5, 5, 3))[:, :, 0]  # (H, W, 5, 5, 3)
    acc = np.einsum("hwijc,kijc->hwk", windows, _KERNELS)
    scale = float(np.abs(_KERNELS).sum(axis=(1, 2, 3)).max() * 255) / 8.0
    return np.tanh(acc.astype(np.float64) / scale)
