import numpy as np
import pytest

from texcomplete import _accel
from texcomplete.fixtures import head_mesh, head_texture
from texcomplete.genmodel import make_toy_plugins

BACKENDS = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])

# filled by tests/test_acceptance.py, printed in the terminal summary
ACCEPTANCE_LINES = {}


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def head():
    return head_mesh()


@pytest.fixture(scope="session")
def head_tex():
    return head_texture()


@pytest.fixture(scope="session")
def plugins():
    return make_toy_plugins(seed=0, d=64, img_size=(64, 64))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def uv_sphere(n_lat=24, n_lon=48, phi_range=(0.02 * np.pi, 0.98 * np.pi)):
    """Lat-long sphere of radius 1 with outward winding and per-vertex uv."""
    from texcomplete.geometry import Mesh

    phi = np.linspace(*phi_range, n_lat + 1)
    lam = np.linspace(-np.pi, np.pi, n_lon + 1)
    L, P = np.meshgrid(lam, phi)
    v = np.stack([np.sin(P) * np.sin(L), -np.cos(P), -np.sin(P) * np.cos(L)], -1).reshape(-1, 3)
    uv = np.stack([L / (2 * np.pi) + 0.5, (P - phi_range[0]) / (phi_range[1] - phi_range[0])], -1).reshape(-1, 2)
    idx = np.arange(v.shape[0]).reshape(n_lat + 1, n_lon + 1)
    a, b, c, d = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    tris = np.concatenate([np.stack([a, c, b], 1), np.stack([b, c, d], 1)])
    fn = np.cross(v[tris[:, 1]] - v[tris[:, 0]], v[tris[:, 2]] - v[tris[:, 0]])
    if np.einsum("ij,ij->", fn, v[tris].mean(1)) < 0:
        tris = tris[:, [0, 2, 1]]
    return Mesh(v, tris, np.clip(uv, 0, 1))


@pytest.fixture(scope="session")
def sphere():
    return uv_sphere()


def sphere_cameras():
    """Input plus five novel views around a unit sphere at distance 4."""
    from texcomplete.geometry import Camera
    from texcomplete.pipeline import default_view_plan

    return default_view_plan(Camera(60.0, 0.0, np.deg2rad(30), 0.0, 0.0, 0.0, 4.0),
                             Camera(60.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.0)).cameras
