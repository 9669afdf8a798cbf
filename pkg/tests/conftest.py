import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from deqmap import meshgen

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def quadrant_population(mesh, factors=(1.0, 2.0, 3.0, 4.0)):
    """3D face areas scaled by a factor chosen from the quadrant of the centroid."""
    cen = mesh.vertices[mesh.faces].mean(axis=1)
    quadrant = (np.floor(np.arctan2(cen[:, 1], cen[:, 0]) / (np.pi / 2)).astype(int)) % 4
    return mesh.face_areas() * np.asarray(factors)[quadrant]


@pytest.fixture(scope="session")
def disk():
    return meshgen.disk_mesh(h=0.1)


@pytest.fixture(scope="session")
def annulus():
    return meshgen.annulus_mesh(0.5, h=0.1)


@pytest.fixture(scope="session")
def grid():
    return meshgen.grid_mesh(12)


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)
