from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from terranav.raster import DemGrid
from terranav.simworld import generate_dem

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def seeded_grid():
    """257 x 257 fractal terrain, 1 m cells."""
    return generate_dem(257, 1.0, 0.5, 20.0, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def affine_grid(a, b, c=0.0, shape=(12, 15), cell=2.0, origin=(100.0, -40.0)):
    h, w = shape
    x = origin[0] + cell * np.arange(w)
    y = origin[1] + cell * np.arange(h)
    X, Y = np.meshgrid(x, y)
    return DemGrid(a * X + b * Y + c, cell, origin[0], origin[1])
