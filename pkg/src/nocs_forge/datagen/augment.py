"""Training-time augmentations: in-plane rotation, Phong relighting and Cutout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import NocsMap, SimilarityPose, rot_z
from .render import RenderedView

MAX_CUTOUT_FRACTION = 0.25
SHAPE_KINDS = ("rectangle", "circle", "triangle", "ellipse")


def rotation_source_index(shape: tuple[int, int], angle: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest source pixel for each output pixel when rotating content by ``angle``.

    The rotation is about the exact image center and matches ``R_z(angle)``
    acting on camera-frame points for a camera whose principal point is that
    center. Returns (rows, cols, in_bounds).
    """
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    du, dv = u - cx, v - cy
    c, s = np.cos(angle), np.sin(angle)
    su = np.rint(c * du + s * dv + cx).astype(np.int64)
    sv = np.rint(-s * du + c * dv + cy).astype(np.int64)
    ok = (su >= 0) & (su < w) & (sv >= 0) & (sv < h)
    return np.clip(sv, 0, h - 1), np.clip(su, 0, w - 1), ok


def rotate_map(arr: np.ndarray, angle: float, fill) -> np.ndarray:
    rows, cols, ok = rotation_source_index(arr.shape[:2], angle)
    out = arr[rows, cols].copy()
    out[~ok] = fill
    return out


def inplane_rotate(view: RenderedView, angle: float) -> RenderedView:
    """Rotate every map about the image center; the pose and normals follow."""
    if angle == 0:
        return view
    k = view.intrinsics
    if k.fx != k.fy or k.cx != (k.width - 1) / 2.0 or k.cy != (k.height - 1) / 2.0:
        raise ValueError("in-plane rotation needs square pixels and a centered principal point")
    rz = rot_z(angle)
    mask = rotate_map(view.mask, angle, False)
    normal = rotate_map(view.normal, angle, 0.0) @ rz.T
    normal[~mask] = 0.0
    pose = SimilarityPose(rz @ view.pose.rotation, rz @ view.pose.translation, view.pose.scale)
    return view.with_maps(
        rgb=rotate_map(view.rgb, angle, 1.0),
        depth=rotate_map(view.depth, angle, 0.0),
        normal=normal,
        nocs=NocsMap(rotate_map(view.nocs.values, angle, 1.0), rotate_map(view.nocs.mask, angle, False)),
        mask=mask,
        pose=pose,
        face=None if view.face is None else rotate_map(view.face, angle, -1),
    )


@dataclass(frozen=True)
class PhongParams:
    ambient: float
    diffuse: float
    specular: float
    shininess: float
    light: tuple[float, float, float]

    def __post_init__(self):
        for name in ("ambient", "diffuse", "specular"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.ambient + self.diffuse > 1.2:
            raise ValueError("ambient + diffuse must not exceed 1.2")
        if self.shininess < 1.0:
            raise ValueError("shininess must be >= 1")
        if abs(np.linalg.norm(self.light) - 1.0) > 1e-6:
            raise ValueError("light direction must be unit length")

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "PhongParams":
        """Random lighting; the light sits on the camera-facing hemisphere (z < 0)."""
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        d[2] = -abs(d[2])
        ambient = float(rng.uniform(0.3, 0.9))
        return cls(
            ambient=ambient,
            diffuse=float(rng.uniform(0.1, min(0.7, 1.2 - ambient))),
            specular=float(rng.uniform(0.0, 0.3)),
            shininess=float(rng.uniform(2.0, 32.0)),
            light=tuple(float(x) for x in d),
        )


def phong_relight(rgb: np.ndarray, normal: np.ndarray, p: PhongParams) -> np.ndarray:
    """Relight foreground pixels (nonzero normal); background is left as is."""
    if rgb.shape != normal.shape:
        raise ValueError(f"rgb {rgb.shape} and normal {normal.shape} disagree")
    fg = np.any(normal != 0, axis=-1)
    n = normal[fg]
    light = np.asarray(p.light, dtype=np.float64)
    view = np.array([0.0, 0.0, -1.0])
    ndl = n @ light
    refl = 2.0 * ndl[:, None] * n - light
    spec = np.maximum(0.0, refl @ view) ** p.shininess
    out = rgb.astype(np.float64, copy=True)
    shade = p.ambient + p.diffuse * np.maximum(0.0, ndl)
    out[fg] = np.clip(rgb[fg] * shade[:, None] + p.specular * spec[:, None], 0.0, 1.0)
    return out


@dataclass(frozen=True)
class CutoutShape:
    """Occluder in pixel units; ``size`` holds half-extents (or radii)."""

    kind: str
    center: tuple[float, float]  # (u, v)
    size: tuple[float, float]
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown cutout shape {self.kind!r}")
        if min(self.size) <= 0:
            raise ValueError("cutout size must be positive")

    def area(self) -> float:
        a, b = self.size
        return {
            "rectangle": 4.0 * a * b,
            "circle": np.pi * a * a,
            "ellipse": np.pi * a * b,
            "triangle": 3.0 * np.sqrt(3.0) / 4.0 * a * b,
        }[self.kind]

    def contains(self, shape: tuple[int, int]) -> np.ndarray:
        h, w = shape
        v, u = np.mgrid[0:h, 0:w].astype(np.float64)
        du, dv = u - self.center[0], v - self.center[1]
        c, s = np.cos(self.angle), np.sin(self.angle)
        x, y = c * du + s * dv, -s * du + c * dv
        a, b = self.size
        if self.kind == "rectangle":
            return (np.abs(x) < a) & (np.abs(y) < b)
        if self.kind == "circle":
            return x * x + y * y < a * a
        if self.kind == "ellipse":
            return (x / a) ** 2 + (y / b) ** 2 < 1.0
        t = np.deg2rad([90.0, 210.0, 330.0])
        corners = np.stack([a * np.cos(t), -b * np.sin(t)], axis=1)
        inside = np.ones(shape, dtype=bool)
        for i in range(3):
            p0, p1 = corners[i], corners[(i + 1) % 3]
            # interior lies to the right of each edge for this corner order
            inside &= (p1[0] - p0[0]) * (y - p0[1]) - (p1[1] - p0[1]) * (x - p0[0]) < 0
        return inside


def random_cutout_shapes(shape: tuple[int, int], rng: np.random.Generator, count: int = 1) -> list[CutoutShape]:
    h, w = shape
    out = []
    for _ in range(count):
        kind = SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]
        a, b = rng.uniform(0.06, 0.2, size=2) * min(h, w)
        if kind == "circle":
            b = a
        out.append(
            CutoutShape(
                kind,
                (float(rng.uniform(0, w - 1)), float(rng.uniform(0, h - 1))),
                (float(a), float(b)),
                float(rng.uniform(0, np.pi)),
            )
        )
    return out


def cutout_region(shape: tuple[int, int], shapes: list[CutoutShape]) -> np.ndarray:
    h, w = shape
    hole = np.zeros(shape, dtype=bool)
    for sh in shapes:
        if sh.area() > MAX_CUTOUT_FRACTION * h * w:
            raise ValueError(f"cutout {sh.kind} covers more than 25% of the image")
        hole |= sh.contains(shape)
    return hole


def cutout(view: RenderedView, shapes: list[CutoutShape] | None = None, rng_seed: int | None = None) -> RenderedView:
    """Blank occluded pixels in the inputs; the NOCS target stays complete.

    With ``shapes=None`` one to three random shapes are drawn from ``rng_seed``.
    """
    if shapes is None:
        rng = np.random.default_rng(rng_seed)
        shapes = random_cutout_shapes(view.mask.shape, rng, int(rng.integers(1, 4)))
    if not shapes:
        return view
    hole = cutout_region(view.mask.shape, shapes)
    rgb, depth, normal = view.rgb.copy(), view.depth.copy(), view.normal.copy()
    rgb[hole] = 1.0
    depth[hole] = 0.0
    normal[hole] = 0.0
    return view.with_maps(rgb=rgb, depth=depth, normal=normal, mask=view.mask & ~hole)
