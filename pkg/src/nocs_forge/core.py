"""Geometric and image-plane types shared by every stage.

Image grids are row-major with the origin at the top-left pixel; ``u`` grows
rightward (columns) and ``v`` downward (rows). Pixel centers sit on integer
coordinates, so the principal ray of pixel ``(u, v)`` is
``((u - cx) / fx, (v - cy) / fy, 1)``.

NOCS values live in ``[0, 1]^3``; the canonical frame is the NOCS cube shifted
by ``-0.5`` so that a similarity pose ``p = s R q + t`` carries canonical points
``q`` into the camera frame, with ``s`` the object's tight-box diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

ORTHO_TOL = 1e-9
NORMAL_TOL = 1e-3
NOCS_BACKGROUND = 1.0


class ShapeError(ValueError):
    """Raised when sibling maps or arrays disagree in shape."""


class FrameError(ValueError):
    """Raised when a point cloud is used in the wrong coordinate frame."""


def as_rotation(matrix, tol: float = ORTHO_TOL) -> np.ndarray:
    """Validate and return a proper rotation as a float64 3x3 array."""
    r = np.asarray(matrix, dtype=np.float64)
    if r.shape != (3, 3):
        raise ShapeError(f"rotation must be 3x3, got {r.shape}")
    if np.abs(r.T @ r - np.eye(3)).max() > tol:
        raise ValueError("rotation columns are not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("rotation determinant is not +1")
    return r


def project_to_rotation(matrix) -> np.ndarray:
    """Nearest proper rotation (Frobenius sense) to an arbitrary 3x3 matrix."""
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` (normalized internally)."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation via a random unit quaternion."""
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class SimilarityPose:
    """Rotation, translation (meters) and uniform scale (meters)."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", as_rotation(self.rotation, tol=1e-6))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "translation", t)
        s = float(self.scale)
        if not (np.isfinite(s) and s > 0):
            raise ValueError(f"scale must be positive and finite, got {s}")
        object.__setattr__(self, "scale", s)

    @classmethod
    def identity(cls) -> "SimilarityPose":
        return cls(np.eye(3), np.zeros(3), 1.0)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply ``s R q + t`` to an ``(N, 3)`` array."""
        return self.scale * (np.asarray(points, dtype=np.float64) @ self.rotation.T) + self.translation

    def compose(self, other: "SimilarityPose") -> "SimilarityPose":
        """``self ∘ other``: first ``other``, then ``self``."""
        return SimilarityPose(
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
            self.scale * other.scale,
        )

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.reshape(-1).tolist(),
            "translation": self.translation.tolist(),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityPose":
        return cls(
            project_to_rotation(np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3)),
            np.asarray(d["translation"], dtype=np.float64),
            float(d["scale"]),
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def centered(cls, size: int, focal: float) -> "CameraIntrinsics":
        """Square camera whose principal point is the exact image center."""
        c = (size - 1) / 2.0
        return cls(focal, focal, c, c, size, size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, points: np.ndarray) -> np.ndarray:
        """Camera-frame ``(N, 3)`` points to ``(N, 2)`` pixel coordinates ``(u, v)``."""
        p = np.asarray(points, dtype=np.float64)
        return np.stack([self.fx * p[:, 0] / p[:, 2] + self.cx, self.fy * p[:, 1] / p[:, 2] + self.cy], axis=1)

    def rays(self) -> np.ndarray:
        """Per-pixel ray directions with unit z, shape ``(H, W, 3)``."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class NocsMap:
    """Per-pixel NOCS coordinates with a validity mask.

    Invalid pixels always hold the background value ``(1, 1, 1)``.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        m = np.asarray(self.mask, dtype=bool)
        if v.ndim != 3 or v.shape[-1] != 3 or m.shape != v.shape[:2]:
            raise ShapeError(f"NOCS values {v.shape} and mask {m.shape} disagree")
        if m.any() and (v[m].min() < 0.0 or v[m].max() > 1.0):
            raise ValueError("valid NOCS values must lie in [0, 1]")
        v[~m] = NOCS_BACKGROUND
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)

    @classmethod
    def empty(cls, height: int, width: int) -> "NocsMap":
        return cls(np.ones((height, width, 3)), np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: Literal["camera", "nocs"]
    pixels: np.ndarray = field(default=None)  # (N, 2) (row, col) of each point, when image-derived

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud entries must be finite")
        if self.frame not in ("camera", "nocs"):
            raise FrameError(f"unknown frame tag {self.frame!r}")
        object.__setattr__(self, "points", p)
        if self.pixels is not None:
            object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2))

    def __len__(self) -> int:
        return len(self.points)


def check_depth(depth: np.ndarray) -> np.ndarray:
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2:
        raise ShapeError(f"depth must be HxW, got {d.shape}")
    if not np.all(np.isfinite(d)) or (d < 0).any():
        raise ValueError("depth must be finite and non-negative")
    return d


def backproject(depth: np.ndarray, mask: np.ndarray, k: CameraIntrinsics) -> PointCloud:
    """Camera-frame points for every masked pixel with nonzero depth."""
    d = check_depth(depth)
    m = np.asarray(mask, dtype=bool)
    if d.shape != m.shape or d.shape != k.shape:
        raise ShapeError(f"depth {d.shape}, mask {m.shape} and intrinsics {k.shape} disagree")
    rows, cols = np.nonzero(m & (d > 0))
    z = d[rows, cols]
    pts = np.stack([z * (cols - k.cx) / k.fx, z * (rows - k.cy) / k.fy, z], axis=1)
    return PointCloud(pts, "camera", np.stack([rows, cols], axis=1))


def nocs_to_canonical(nocs: NocsMap) -> PointCloud:
    rows, cols = np.nonzero(nocs.mask)
    return PointCloud(nocs.values[rows, cols] - 0.5, "nocs", np.stack([rows, cols], axis=1))


def apply_pose(pose: SimilarityPose, cloud: PointCloud) -> PointCloud:
    if cloud.frame != "nocs":
        raise FrameError(f"apply_pose expects a NOCS-frame cloud, got {cloud.frame!r}")
    return PointCloud(pose.transform(cloud.points), "camera", cloud.pixels)


def check_normals(normal: np.ndarray, mask: np.ndarray) -> None:
    """Assert the NormalMap invariant: unit on ``mask``, exactly zero elsewhere."""
    n = np.asarray(normal)
    m = np.asarray(mask, dtype=bool)
    if n.shape != m.shape + (3,):
        raise ShapeError(f"normal map {n.shape} does not match mask {m.shape}")
    norms = np.linalg.norm(n[m], axis=-1)
    if norms.size and np.abs(norms - 1.0).max() > NORMAL_TOL:
        raise ValueError("normals on valid pixels must be unit length")
    if np.any(n[~m] != 0):
        raise ValueError("normals on invalid pixels must be zero")
