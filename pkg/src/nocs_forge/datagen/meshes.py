"""Parametric triangle meshes in the canonical (unit-diagonal, centered) frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Built-in categories; ids start at 1 because 0 is the unknown category.
CATEGORIES = ("cylinder", "cone", "box", "mug")
_PALETTE = {
    "cylinder": (0.75, 0.3, 0.25),
    "cone": (0.25, 0.45, 0.8),
    "box": (0.35, 0.7, 0.3),
    "mug": (0.8, 0.7, 0.25),
}


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int
    colors: np.ndarray  # (V, 3) in [0, 1]

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.triangles, dtype=np.int64)
        c = np.broadcast_to(np.asarray(self.colors, dtype=np.float64), v.shape).copy()
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        object.__setattr__(self, "colors", c)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def is_canonical(self, tol: float = 1e-6) -> bool:
        lo, hi = self.bounds()
        return abs(np.linalg.norm(hi - lo) - 1.0) <= tol and np.abs(hi + lo).max() <= tol


def canonicalize(vertices: np.ndarray) -> np.ndarray:
    """Center the tight bounding box at the origin and scale its diagonal to 1."""
    v = np.asarray(vertices, dtype=np.float64)
    lo, hi = v.min(axis=0), v.max(axis=0)
    return (v - (lo + hi) / 2.0) / np.linalg.norm(hi - lo)


def _merge(parts: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    verts, tris, offset = [], [], 0
    for v, f in parts:
        verts.append(v)
        tris.append(f + offset)
        offset += len(v)
    return np.concatenate(verts), np.concatenate(tris)


def _box(extents, center=(0.0, 0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    hx, hy, hz = np.asarray(extents, dtype=np.float64) / 2.0
    corners = np.array(
        [[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    ) + np.asarray(center, dtype=np.float64)
    # corner index = 4*ix + 2*iy + iz
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return corners, np.array(tris)


def _lathe(profile: list[tuple[float, float]], segments: int) -> tuple[np.ndarray, np.ndarray]:
    """Surface of revolution about +y from a (radius, height) profile.

    Zero-radius profile points collapse to a single pole vertex.
    """
    verts, rings = [], []
    theta = 2 * np.pi * np.arange(segments) / segments
    for r, y in profile:
        if r == 0.0:
            rings.append([len(verts)])
            verts.append((0.0, y, 0.0))
        else:
            idx = list(range(len(verts), len(verts) + segments))
            verts += [(r * np.cos(t), y, r * np.sin(t)) for t in theta]
            rings.append(idx)
    tris = []
    for a, b in zip(rings[:-1], rings[1:]):
        for i in range(segments):
            j = (i + 1) % segments
            if len(a) == 1:
                tris.append((a[0], b[j], b[i]))
            elif len(b) == 1:
                tris.append((a[i], a[j], b[0]))
            else:
                tris += [(a[i], a[j], b[j]), (a[i], b[j], b[i])]
    return np.array(verts), np.array(tris)


def cylinder(radius: float, height: float, segments: int = 48, color=(0.6, 0.6, 0.6)) -> TriangleMesh:
    h = height / 2.0
    v, f = _lathe([(0.0, -h), (radius, -h), (radius, h), (0.0, h)], segments)
    return TriangleMesh(canonicalize(v), f, color)


def cone(radius: float, height: float, segments: int = 48, color=(0.6, 0.6, 0.6)) -> TriangleMesh:
    h = height / 2.0
    v, f = _lathe([(0.0, -h), (radius, -h), (0.0, h)], segments)
    return TriangleMesh(canonicalize(v), f, color)


def box(extents, color=(0.6, 0.6, 0.6)) -> TriangleMesh:
    v, f = _box(extents)
    return TriangleMesh(canonicalize(v), f, color)


def mug(width: float, height: float, handle: float, color=(0.6, 0.6, 0.6)) -> TriangleMesh:
    """Square-section body with a box handle sticking out along +x."""
    body = _box((width, height, width))
    grip = _box((handle, height * 0.6, width * 0.25), center=(width / 2 + handle / 2, 0.0, 0.0))
    v, f = _merge([body, grip])
    return TriangleMesh(canonicalize(v), f, color)


def random_instance(category: str, rng: np.random.Generator) -> TriangleMesh:
    """Sample a shape instance of a built-in category with a uniform base color.

    Colors are jittered around a per-category hue.
    """
    color = np.clip(np.asarray(_PALETTE.get(category, (0.5, 0.5, 0.5))) + rng.uniform(-0.12, 0.12, size=3), 0.05, 0.95)
    if category == "cylinder":
        return cylinder(rng.uniform(0.25, 0.5), 1.0, color=color)
    if category == "cone":
        return cone(rng.uniform(0.3, 0.55), 1.0, color=color)
    if category == "box":
        return box(rng.uniform(0.4, 1.0, size=3), color=color)
    if category == "mug":
        return mug(rng.uniform(0.5, 0.8), 1.0, rng.uniform(0.15, 0.3), color=color)
    raise ValueError(f"unknown category {category!r}")
