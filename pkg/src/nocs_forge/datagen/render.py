"""Z-buffer triangle rasterizer producing RGB, depth, normal, NOCS and mask images.

Depth and NOCS are interpolated perspective-correctly at pixel centers, so a
back-projected depth pixel and the posed canonical point of the same pixel
coincide up to floating-point error.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..core import CameraIntrinsics, NocsMap, ShapeError, SimilarityPose
from .cameras import CameraPose
from .meshes import TriangleMesh


class DegenerateViewError(RuntimeError):
    """The object does not cover any pixel."""


@dataclass(frozen=True)
class RenderedView:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) meters, 0 = missing
    normal: np.ndarray  # (H, W, 3) camera frame, zero off-mask
    nocs: NocsMap
    mask: np.ndarray  # (H, W) bool
    pose: SimilarityPose
    category: int
    intrinsics: CameraIntrinsics
    instance: str = "000"
    view_index: int = 0
    face: np.ndarray = field(default=None, repr=False)  # (H, W) triangle id, -1 background

    def __post_init__(self):
        shape = self.mask.shape
        for name in ("rgb", "depth", "normal"):
            if getattr(self, name).shape[:2] != shape:
                raise ShapeError(f"{name} shape {getattr(self, name).shape} does not match mask {shape}")
        if self.nocs.shape != shape or self.intrinsics.shape != shape:
            raise ShapeError("NOCS map or intrinsics do not match the image size")

    def with_maps(self, **changes) -> "RenderedView":
        return replace(self, **changes)


def _shade(base: np.ndarray, normal: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    lambert = np.abs(np.sum(normal * view_dir, axis=-1, keepdims=True))
    return np.clip(base * (0.35 + 0.65 * lambert), 0.0, 1.0)


def render(
    mesh: TriangleMesh,
    cam: CameraPose,
    k: CameraIntrinsics,
    scale: float = 1.0,
    category: int = 0,
    instance: str = "000",
    view_index: int = 0,
) -> RenderedView:
    """Rasterize ``mesh`` scaled to a physical diagonal of ``scale`` meters."""
    pose = SimilarityPose(cam.rotation, cam.translation, scale)
    cam_verts = pose.transform(mesh.vertices)
    if (cam_verts[:, 2] <= 1e-6).any():
        raise DegenerateViewError("mesh crosses the camera plane")
    h, w = k.height, k.width
    uv = k.project(cam_verts)
    inv_z = 1.0 / cam_verts[:, 2]

    zbuf = np.full((h, w), np.inf)
    face_id = np.full((h, w), -1, dtype=np.int64)
    bary = np.zeros((h, w, 3))

    for fi, (a, b, c) in enumerate(mesh.triangles):
        pa, pb, pc = uv[a], uv[b], uv[c]
        area = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        if abs(area) < 1e-12:
            continue
        tri = np.stack([pa, pb, pc])
        u0 = max(int(np.ceil(tri[:, 0].min())), 0)
        u1 = min(int(np.floor(tri[:, 0].max())), w - 1)
        v0 = max(int(np.ceil(tri[:, 1].min())), 0)
        v1 = min(int(np.floor(tri[:, 1].max())), h - 1)
        if u0 > u1 or v0 > v1:
            continue
        vv, uu = np.mgrid[v0 : v1 + 1, u0 : u1 + 1].astype(np.float64)
        # screen-space barycentrics from edge functions
        l0 = ((pb[0] - uu) * (pc[1] - vv) - (pb[1] - vv) * (pc[0] - uu)) / area
        l1 = ((pc[0] - uu) * (pa[1] - vv) - (pc[1] - vv) * (pa[0] - uu)) / area
        l2 = 1.0 - l0 - l1
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not inside.any():
            continue
        wsum = l0 * inv_z[a] + l1 * inv_z[b] + l2 * inv_z[c]
        z = 1.0 / np.where(inside, wsum, 1.0)
        sub = zbuf[v0 : v1 + 1, u0 : u1 + 1]
        win = inside & (z < sub)
        if not win.any():
            continue
        sub[win] = z[win]
        face_id[v0 : v1 + 1, u0 : u1 + 1][win] = fi
        pc_bary = np.stack([l0 * inv_z[a], l1 * inv_z[b], l2 * inv_z[c]], axis=-1) * z[..., None]
        bary[v0 : v1 + 1, u0 : u1 + 1][win] = pc_bary[win]

    mask = face_id >= 0
    if not mask.any():
        raise DegenerateViewError("object covers no pixel")

    tris = mesh.triangles[face_id[mask]]
    b = bary[mask]
    nocs_vals = np.ones((h, w, 3))
    nocs_vals[mask] = np.clip(np.einsum("ni,nij->nj", b, mesh.vertices[tris]) + 0.5, 0.0, 1.0)

    fv = cam_verts[mesh.triangles]
    fn = np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0])
    fn /= np.maximum(np.linalg.norm(fn, axis=1, keepdims=True), 1e-300)
    fn *= -np.sign(np.sum(fn * fv[:, 0], axis=1, keepdims=True) + 1e-300)  # face the camera
    normal = np.zeros((h, w, 3))
    normal[mask] = fn[face_id[mask]]

    depth = np.where(mask, zbuf, 0.0)
    rays = k.rays()
    view_dir = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    rgb = np.ones((h, w, 3))
    base = mesh.colors[mesh.triangles].mean(axis=1)[face_id[mask]]
    rgb[mask] = _shade(base, normal[mask], view_dir[mask])

    return RenderedView(
        rgb=rgb,
        depth=depth,
        normal=normal,
        nocs=NocsMap(nocs_vals, mask),
        mask=mask,
        pose=pose,
        category=category,
        intrinsics=k,
        instance=instance,
        view_index=view_index,
        face=face_id,
    )


def default_intrinsics(size: int = 64) -> CameraIntrinsics:
    """Centered pinhole camera framing an object seen from 2.5 diagonals away."""
    return CameraIntrinsics.centered(size, focal=1.75 * size)


def render_views(
    mesh: TriangleMesh,
    cameras: list[CameraPose],
    k: CameraIntrinsics,
    scale: float,
    category: int,
    instance: str = "000",
) -> list[RenderedView]:
    return [render(mesh, cam, k, scale, category, instance, i) for i, cam in enumerate(cameras)]
