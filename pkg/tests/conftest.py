import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ppumkit.mesh import build_mesh
from ppumkit.problems import make_domain

settings.register_profile(
    "ppumkit", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("ppumkit")


def canonical(mesh, ndigits=12):
    """Geometry-only fingerprint: sorted triangles given by rounded vertex coordinates."""
    P = np.round(mesh.points, ndigits)
    tris = [tuple(sorted(map(tuple, P[t].tolist()))) for t in mesh.triangles]
    return sorted(tris)


def brute_incidence(mesh, v):
    return sorted(int(s) for s in mesh.live_ids() if v in mesh.sverts[s])


@pytest.fixture
def square2():
    return make_domain("unit_square", 0)


@pytest.fixture
def square8():
    # 8 triangles, 9 vertices
    return make_domain("unit_square", 2)


@pytest.fixture
def single_triangle():
    return build_mesh([((0, 0), 1), ((1, 0), 1), ((0, 1), 1)], [(0, 1, 2)])
