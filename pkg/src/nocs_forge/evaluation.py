"""Pose error metrics, n-degree m-cm mAP, ablation tables and plot outputs."""

from __future__ import annotations

import csv
import json
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from PIL import Image

from .core import CameraIntrinsics, SimilarityPose

SYMMETRY_KINDS = ("none", "axial", "axial_reflective")
DEFAULT_THRESHOLDS = ((5.0, 5.0), (10.0, 5.0), (15.0, 5.0))
GRID_HEADER = ("noise", "pca", "map_5_5", "map_10_5", "map_15_5", "seconds")


@dataclass(frozen=True)
class SymmetryClass:
    kind: str = "none"
    axis: tuple[float, float, float] = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if self.kind not in SYMMETRY_KINDS:
            raise ValueError(f"unknown symmetry {self.kind!r}")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-9:
            raise ValueError("symmetry axis must be unit length")


# The cylinder is also symmetric under flipping its axis; the box instances
# have unequal sides so they are treated as asymmetric.
CATEGORY_SYMMETRY = {
    "cylinder": SymmetryClass("axial_reflective"),
    "cone": SymmetryClass("axial"),
    "box": SymmetryClass("none"),
    "mug": SymmetryClass("none"),
}


def _angle(cos: float) -> float:
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def rotation_error(gt: np.ndarray, pred: np.ndarray, sym: SymmetryClass = SymmetryClass()) -> float:
    """Degrees in ``[0, 180]``; symmetric classes compare only the symmetry axis."""
    if sym.kind == "none":
        return _angle((np.trace(gt.T @ pred) - 1.0) / 2.0)
    axis = np.asarray(sym.axis, dtype=np.float64)
    y_gt, y_pred = gt @ axis, pred @ axis
    # atan2 keeps full precision near 0 degrees, where arccos loses half the digits
    dot = float(y_gt @ y_pred)
    cross = float(np.linalg.norm(np.cross(y_gt, y_pred)))
    return float(np.degrees(np.arctan2(cross, abs(dot) if sym.kind == "axial_reflective" else dot)))


def translation_error(gt, pred) -> float:
    """Centimeters."""
    return float(np.linalg.norm(np.asarray(gt, dtype=np.float64) - np.asarray(pred, dtype=np.float64)) * 100.0)


@dataclass(frozen=True)
class EvalRecord:
    category: str
    gt: SimilarityPose
    pred: SimilarityPose
    rotation_deg: float
    translation_cm: float
    passed: dict = field(default_factory=dict)  # (n_deg, m_cm) -> bool

    def passes(self, n_deg: float, m_cm: float) -> bool:
        return self.rotation_deg <= n_deg and self.translation_cm <= m_cm


def make_record(
    category: str, gt: SimilarityPose, pred: SimilarityPose, sym: SymmetryClass | None = None,
    thresholds=DEFAULT_THRESHOLDS,
) -> EvalRecord:
    sym = sym if sym is not None else CATEGORY_SYMMETRY.get(category, SymmetryClass())
    r = rotation_error(gt.rotation, pred.rotation, sym)
    t = translation_error(gt.translation, pred.translation)
    flags = {(n, m): (r <= n and t <= m) for n, m in thresholds}
    return EvalRecord(category, gt, pred, r, t, flags)


def map_at(records: Iterable[EvalRecord], n_deg: float, m_cm: float) -> tuple[dict[str, float], float]:
    """Per-category precision at the threshold and their unweighted mean."""
    by_cat = defaultdict(list)
    for rec in records:
        by_cat[rec.category].append(rec.passes(n_deg, m_cm))
    if not by_cat:
        raise ValueError("no records to evaluate")
    per = {c: float(np.mean(v)) for c, v in sorted(by_cat.items())}
    return per, float(np.mean(list(per.values())))


def map_row(records: list[EvalRecord], thresholds=DEFAULT_THRESHOLDS) -> list[float]:
    return [map_at(records, n, m)[1] for n, m in thresholds]


def ablation_grid(
    run_cell: Callable[[int, int], list[EvalRecord]], noises=(1, 3, 6), pcas=(3, 6)
) -> list[dict]:
    """Evaluate every (noise count, PCA dimension) cell; rows follow ``GRID_HEADER``."""
    rows = []
    for noise in noises:
        for pca in pcas:
            start = time.perf_counter()
            records = run_cell(noise, pca)
            m5, m10, m15 = map_row(records)
            rows.append({
                "noise": noise, "pca": pca, "map_5_5": m5, "map_10_5": m10, "map_15_5": m15,
                "seconds": round(time.perf_counter() - start, 3),
            })
    return rows


def write_table(rows: list[dict], path, provenance: dict | None = None) -> Path:
    """CSV in ``GRID_HEADER`` order plus a ``.provenance.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=GRID_HEADER, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    if provenance is not None:
        path.with_suffix(".provenance.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    return path


# --- plots -----------------------------------------------------------------

def axis_directions(rotations: Iterable[np.ndarray], axis=(0.0, 1.0, 0.0)) -> np.ndarray:
    a = np.asarray(axis, dtype=np.float64)
    return np.array([np.asarray(r) @ a for r in rotations]).reshape(-1, 3)


def _draw_line(img: np.ndarray, p0, p1, color) -> None:
    n = int(np.ceil(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1])))) + 1
    xs = np.rint(np.linspace(p0[0], p1[0], n)).astype(int)
    ys = np.rint(np.linspace(p0[1], p1[1], n)).astype(int)
    ok = (xs >= 0) & (xs < img.shape[1]) & (ys >= 0) & (ys < img.shape[0])
    img[ys[ok], xs[ok]] = color


def sphere_image(dirs: np.ndarray, size: int = 256) -> np.ndarray:
    """Orthographic view of the unit sphere from +z with the directions as dots.

    Front-facing points (z >= 0) are red, back-facing ones blue.
    """
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    c = (size - 1) / 2.0
    rad = 0.45 * size
    theta = np.linspace(0, 2 * np.pi, 720)
    _draw_circle = np.stack([c + rad * np.cos(theta), c + rad * np.sin(theta)], axis=1)
    for a, b in zip(_draw_circle[:-1], _draw_circle[1:]):
        _draw_line(img, a, b, (90, 90, 90))
    for d in dirs:
        x, y = c + rad * d[0], c - rad * d[1]
        color = (220, 40, 40) if d[2] >= 0 else (40, 80, 220)
        yy, xx = np.mgrid[-2:3, -2:3]
        keep = yy**2 + xx**2 <= 5
        rows, cols = np.rint(y + yy[keep]).astype(int), np.rint(x + xx[keep]).astype(int)
        ok = (rows >= 0) & (rows < size) & (cols >= 0) & (cols < size)
        img[rows[ok], cols[ok]] = color
    return img


def write_sphere_plot(rotations, path, axis=(0.0, 1.0, 0.0)) -> tuple[Path, Path]:
    """Symmetry-axis directions as ``x,y,z`` CSV rows plus a PNG next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dirs = axis_directions(rotations, axis)
    csv_path = path.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z"])
        w.writerows(dirs.tolist())
    png = path.with_suffix(".png")
    Image.fromarray(sphere_image(dirs)).save(png)
    return csv_path, png


BOX_EDGES = [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]


def box_corners(extent=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Corners of a centered canonical box; corner index bits are (x, y, z)."""
    h = np.asarray(extent, dtype=np.float64) / 2.0
    return np.array([[(-1) ** (1 - (i >> 2 & 1)) * h[0], (-1) ** (1 - (i >> 1 & 1)) * h[1], (-1) ** (1 - (i & 1)) * h[2]] for i in range(8)])


def wireframe_corners(pose: SimilarityPose, k: CameraIntrinsics, extent=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Pixel ``(u, v)`` of each posed box corner."""
    return k.project(pose.transform(box_corners(extent)))


def overlay_image(rgb: np.ndarray, pose: SimilarityPose, k: CameraIntrinsics, extent=(1.0, 1.0, 1.0), color=(0, 200, 0)) -> np.ndarray:
    img = np.clip(np.rint(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8).copy()
    uv = wireframe_corners(pose, k, extent)
    for a, b in BOX_EDGES:
        _draw_line(img, uv[a], uv[b], color)
    return img


def write_overlay(rgb, pose, k, path, extent=(1.0, 1.0, 1.0), color=(0, 200, 0)) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(overlay_image(rgb, pose, k, extent, color)).save(path)
    return path
