from __future__ import annotations

import numpy as np

from .cameras import icosphere_cameras
from .meshes import TriangleMesh, random_instance
from .render import RenderedView, default_intrinsics, render_views

CAMERA_DISTANCE = 2.5  # in object diagonals


def generate_instances(
    categories: list[str], instances: int, seed: int
) -> list[tuple[int, str, TriangleMesh, float]]:
    """(category id, instance name, mesh, physical diagonal in meters) per instance."""
    rng = np.random.default_rng(seed)
    out = []
    for cid, name in enumerate(categories, start=1):
        for i in range(instances):
            mesh = random_instance(name, rng)
            out.append((cid, f"{i:03d}", mesh, float(rng.uniform(0.15, 0.3))))
    return out


def generate_views(
    categories: list[str],
    instances: int = 1,
    subdivisions: int = 2,
    image_size: int = 64,
    seed: int = 0,
    first_instance: int = 0,
) -> list[RenderedView]:
    """Render every instance from every icosphere camera.

    Instances ``first_instance ..`` of the seeded sequence are rendered, so
    held-out instances can be produced with the same seed.
    """
    k = default_intrinsics(image_size)
    views = []
    for cid, inst, mesh, scale in generate_instances(categories, first_instance + instances, seed):
        if int(inst) < first_instance:
            continue
        cams = icosphere_cameras(subdivisions, CAMERA_DISTANCE * scale)
        views += render_views(mesh, cams, k, scale, cid, inst)
    return views
