"""Turn a detection in a depth (and optionally RGB) image into network conditions."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..core import CameraIntrinsics, check_depth
from ..denoiser.conditions import ConditionSet
from ..features import PcaModel, project, resize_nn
from .warp import CROP_PADDING, Detection, WarpTransform, warp_bilinear, warp_nearest

Extractor = Callable[[np.ndarray], np.ndarray]

# depth steps differing by more than this ratio (plus a relative floor) mark an occlusion edge
JUMP_RATIO = 3.0
JUMP_FLOOR = 0.01


def camera_points(depth: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Back-project every pixel; ``(H, W, 3)``, zero depth gives the origin."""
    d = check_depth(depth)
    return k.rays() * d[..., None]


def normals_from_depth(depth: np.ndarray, mask: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Camera-frame unit normals from central differences of back-projected points.

    The difference becomes one-sided where a neighbor falls outside ``mask`` or
    where the two depth steps disagree strongly (an occlusion edge; the
    smaller step is kept). Pixels with no usable neighbor along an axis get a
    zero normal. Normals face the camera.
    """
    p = camera_points(depth, k)
    z = p[..., 2]
    valid = np.asarray(mask, dtype=bool) & (z > 0)

    def diff(axis: int) -> tuple[np.ndarray, np.ndarray]:
        fwd = np.roll(p, -1, axis=axis)
        bwd = np.roll(p, 1, axis=axis)
        vf = np.roll(valid, -1, axis=axis)
        vb = np.roll(valid, 1, axis=axis)
        edge = [slice(None)] * 2
        edge[axis] = -1
        vf[tuple(edge)] = False
        edge[axis] = 0
        vb[tuple(edge)] = False
        sf, sb = np.abs(fwd[..., 2] - z), np.abs(z - bwd[..., 2])
        jump = np.maximum(sf, sb) > JUMP_RATIO * np.minimum(sf, sb) + JUMP_FLOOR * z
        both = vf & vb & ~jump
        use_f = vf & ~both & (~vb | (sf < sb))
        use_b = vb & ~both & ~use_f
        d = np.where(both[..., None], (fwd - bwd) / 2.0, 0.0)
        d = np.where(use_f[..., None], fwd - p, d)
        d = np.where(use_b[..., None], p - bwd, d)
        return d, vf | vb

    du, ok_u = diff(1)
    dv, ok_v = diff(0)
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1)
    good = valid & ok_u & ok_v & (norm > 1e-12)
    n = np.where(good[..., None], n / np.maximum(norm, 1e-12)[..., None], 0.0)
    flip = np.sum(n * p, axis=-1) > 0
    n[flip] *= -1.0
    return n


def object_mask(depth: np.ndarray, det: Detection, mask: np.ndarray | None = None) -> np.ndarray:
    """The supplied mask clipped to the box, or depth-valid box pixels without one."""
    d = np.asarray(depth)
    h, w = d.shape
    det.check_inside(h, w)
    x0, y0, x1, y1 = det.box
    in_box = np.zeros((h, w), dtype=bool)
    in_box[int(np.floor(y0)) : int(np.ceil(y1)), int(np.floor(x0)) : int(np.ceil(x1))] = True
    out = in_box & (d > 0) if mask is None else np.asarray(mask, dtype=bool) & in_box
    if not out.any():
        raise ValueError("detection has an empty object mask")
    return out


def prepare_conditions(
    depth: np.ndarray,
    det: Detection,
    k: CameraIntrinsics,
    *,
    rgb: np.ndarray | None = None,
    mask: np.ndarray | None = None,
    pca: PcaModel | None = None,
    extractor: Extractor | None = None,
    features: np.ndarray | None = None,
    out_size: int = 32,
    padding: float = CROP_PADDING,
) -> tuple[ConditionSet, WarpTransform]:
    """Square, object-centered conditions at ``out_size``.

    Without a mask the depth-valid pixels inside the box are used. Features
    come from a precomputed full-image map ``features`` (nearest-resampled
    into the crop) or from ``extractor`` run on the RGB crop; either way they
    need ``pca``. Anything missing becomes null.
    Outside the object, normals and features are zero and RGB is white.
    """
    d = check_depth(depth)
    h, w = d.shape
    if k.shape != (h, w):
        raise ValueError(f"intrinsics {k.shape} do not match depth {d.shape}")
    mask = object_mask(d, det, mask)

    wt = WarpTransform.around(det, (h, w), out_size, padding)
    crop_mask = warp_nearest(mask, wt, False)

    normal, wsum = warp_bilinear(normals_from_depth(d, mask, k), mask.astype(np.float64), wt)
    norm = np.linalg.norm(normal, axis=-1, keepdims=True)
    normal = np.where((crop_mask & (wsum > 0))[..., None] & (norm > 1e-9), normal / np.maximum(norm, 1e-12), 0.0)

    crop_rgb = feat = f = None
    if rgb is not None:
        crop_rgb, _ = warp_bilinear(np.asarray(rgb, dtype=np.float64), np.ones((h, w)), wt)
        crop_rgb = np.where(crop_mask[..., None], crop_rgb, 1.0)
    if pca is not None:
        if features is not None:
            f = project(pca, warp_nearest(resize_nn(np.asarray(features), h, w), wt, 0.0))
        elif crop_rgb is not None and extractor is not None:
            f = project(pca, extractor(crop_rgb))
    if f is not None:
        feat = np.where(crop_mask[..., None], resize_nn(f, out_size, out_size), 0.0)
    cond = ConditionSet(normal=normal, rgb=crop_rgb, feat=feat, category=det.category, mask=crop_mask)
    return cond, wt
