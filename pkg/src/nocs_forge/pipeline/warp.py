"""Square crop-and-resize warps around a detection box.

The warp is a translation plus uniform scale. The output pixel ``(i, j)`` samples
the source at continuous edge coordinates
``(x0 + (j + 0.5) * side / out, y0 + (i + 0.5) * side / out)``, where the
source pixel ``u`` covers ``[u, u + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import NocsMap

CROP_PADDING = 1.2


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]  # x0, y0, x1, y1 in pixel-edge coordinates
    category: int = 0

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"detection box {self.box} has no area")

    def check_inside(self, height: int, width: int) -> None:
        x0, y0, x1, y1 = self.box
        if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
            raise ValueError(f"detection box {self.box} leaves the {width}x{height} image")

    @classmethod
    def from_mask(cls, mask: np.ndarray, category: int = 0) -> "Detection":
        rows, cols = np.nonzero(mask)
        if rows.size == 0:
            raise ValueError("empty mask has no bounding box")
        return cls((float(cols.min()), float(rows.min()), float(cols.max() + 1), float(rows.max() + 1)), category)

    def to_dict(self) -> dict:
        return {"box": list(self.box), "category": self.category}

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(tuple(float(x) for x in d["box"]), int(d.get("category", 0)))


@dataclass(frozen=True)
class WarpTransform:
    x0: float
    y0: float
    side: float
    out_size: int
    src_shape: tuple[int, int]  # (H, W)

    @classmethod
    def around(cls, det: Detection, src_shape: tuple[int, int], out_size: int, padding: float = CROP_PADDING):
        """Square of ``padding`` times the longer box side, centered on the box.

        The side is clamped to the longer image side; parts of the square that
        fall outside the image read as background.
        """
        h, w = src_shape
        bx0, by0, bx1, by1 = det.box
        side = min(padding * max(bx1 - bx0, by1 - by0), float(max(h, w)))
        cx, cy = (bx0 + bx1) / 2.0, (by0 + by1) / 2.0
        return cls(cx - side / 2.0, cy - side / 2.0, side, out_size, (h, w))

    @property
    def scale(self) -> float:
        """Output pixels per source pixel."""
        return self.out_size / self.side

    def to_source(self, col, row):
        """Output pixel centers -> continuous source edge coordinates."""
        return (
            self.x0 + (np.asarray(col) + 0.5) / self.scale,
            self.y0 + (np.asarray(row) + 0.5) / self.scale,
        )

    def to_output(self, x, y):
        """Continuous source edge coordinates -> continuous output edge coordinates."""
        return (np.asarray(x) - self.x0) * self.scale, (np.asarray(y) - self.y0) * self.scale

    def source_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest source (rows, cols) for each output pixel plus an in-image flag."""
        n = self.out_size
        jj, ii = np.meshgrid(np.arange(n), np.arange(n))
        x, y = self.to_source(jj, ii)
        cols, rows = np.floor(x).astype(np.int64), np.floor(y).astype(np.int64)
        h, w = self.src_shape
        ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        return np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1), ok

    def output_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest output (rows, cols) for each source pixel plus an in-crop flag."""
        h, w = self.src_shape
        vv, uu = np.mgrid[0:h, 0:w]
        x, y = self.to_output(uu + 0.5, vv + 0.5)
        cols, rows = np.floor(x).astype(np.int64), np.floor(y).astype(np.int64)
        n = self.out_size
        ok = (rows >= 0) & (rows < n) & (cols >= 0) & (cols < n)
        return np.clip(rows, 0, n - 1), np.clip(cols, 0, n - 1), ok

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "side": self.side, "out_size": self.out_size, "src_shape": list(self.src_shape)}


def warp_nearest(arr: np.ndarray, w: WarpTransform, fill) -> np.ndarray:
    rows, cols, ok = w.source_index()
    out = arr[rows, cols].copy()
    out[~ok] = fill
    return out


def warp_bilinear(arr: np.ndarray, valid: np.ndarray, w: WarpTransform) -> tuple[np.ndarray, np.ndarray]:
    """Validity-weighted bilinear resampling.

    Returns the resampled ``(n, n, C)`` map and the total weight per pixel;
    pixels with zero weight carry zeros.
    """
    n = w.out_size
    h, wd = w.src_shape
    jj, ii = np.meshgrid(np.arange(n), np.arange(n))
    x, y = w.to_source(jj, ii)
    x, y = x - 0.5, y - 0.5  # to pixel-center coordinates
    x0, y0 = np.floor(x).astype(np.int64), np.floor(y).astype(np.int64)
    fx, fy = x - x0, y - y0
    acc = np.zeros((n, n, arr.shape[-1]))
    wsum = np.zeros((n, n))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            r, c = y0 + dy, x0 + dx
            ok = (r >= 0) & (r < h) & (c >= 0) & (c < wd)
            rc, cc = np.clip(r, 0, h - 1), np.clip(c, 0, wd - 1)
            wt = wx * wy * ok * valid[rc, cc]
            acc += wt[..., None] * arr[rc, cc]
            wsum += wt
    out = np.where(wsum[..., None] > 0, acc / np.maximum(wsum, 1e-12)[..., None], 0.0)
    return out, wsum


def unwarp_nocs(nocs: NocsMap, w: WarpTransform) -> NocsMap:
    """Send a square NOCS map back to the source image; outside the crop is invalid."""
    rows, cols, ok = w.output_index()
    mask = ok & nocs.mask[rows, cols]
    vals = np.where(mask[..., None], nocs.values[rows, cols], 1.0)
    return NocsMap(vals, mask)


def warp_nocs(nocs: NocsMap, w: WarpTransform) -> NocsMap:
    return NocsMap(warp_nearest(nocs.values, w, 1.0), warp_nearest(nocs.mask, w, False))
