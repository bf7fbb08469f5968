import numpy as np
import pytest

from wgflow.mesh import build_cartesian_mesh, build_interval_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def mesh_family():
    """Small meshes spanning both dimensions and non-unit domains."""
    return [
        build_interval_mesh(3, (0.0, 1.0)),
        build_interval_mesh(17, (-1.0, 2.0)),
        build_cartesian_mesh(2, 2, (0.0, 1.0, 0.0, 1.0)),
        build_cartesian_mesh(4, 3, (0.0, 2.0, -1.0, 1.0)),
    ]


@pytest.fixture(params=range(4), ids=["interval3", "interval17", "cart2x2", "cart4x3"])
def any_mesh(request):
    return mesh_family()[request.param]
