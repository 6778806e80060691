"""Shared fixtures: small rendered view sets and a default schedule."""

from __future__ import annotations

import numpy as np
import pytest

from nocs_forge.core import backproject, apply_pose, nocs_to_canonical
from nocs_forge.datagen.generate import generate_views
from nocs_forge.scheduler import NoiseSchedule

TOY_PAIR = ["cylinder", "cone"]


def consistency_error(view) -> float:
    """Largest distance between back-projected depth and the posed NOCS point of each pixel."""
    cam = backproject(view.depth, view.mask, view.intrinsics)
    obj = apply_pose(view.pose, nocs_to_canonical(view.nocs))
    assert np.array_equal(cam.pixels, obj.pixels)
    return float(np.linalg.norm(cam.points - obj.points, axis=1).max())


def consistency_bound(view) -> float:
    return view.pose.scale * np.sqrt(3.0) / 255.0 + 1e-6


@pytest.fixture(scope="session")
def pair_views():
    """One cylinder and one cone instance from the 12 icosahedron cameras."""
    return generate_views(TOY_PAIR, instances=1, subdivisions=0, image_size=64, seed=3)


@pytest.fixture(scope="session")
def four_category_views():
    return generate_views(["cylinder", "cone", "box", "mug"], instances=1, subdivisions=0, image_size=64, seed=5)


@pytest.fixture(scope="session")
def schedule():
    return NoiseSchedule.linear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_checkpoint():
    """The recorded toy checkpoint (trained on first use when absent; slow)."""
    from nocs_forge.toy import load_or_train_toy

    return load_or_train_toy()
