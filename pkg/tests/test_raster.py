import warnings

import numpy as np
import pytest
from scipy.ndimage import map_coordinates

from texcomplete.errors import EmptyRasterWarning, UvOverlapWarning
from texcomplete.fixtures import input_camera
from texcomplete.geometry import Camera, Mesh, project
from texcomplete.raster import (
    RasterImage,
    TextureSource,
    VertexAttributes,
    rasterize,
    rasterize_fragments,
    render_view,
    sample_bilinear,
    unwrap_to_uv,
)


def q8(x):
    return np.round(np.clip(x, 0, 1) * 255) / 255


def frontal_quad(n=1):
    """Square [-1, 1]^2 at z = 0 split into 2 n^2 triangles, uv = normalized position."""
    t = np.linspace(-1, 1, n + 1)
    X, Y = np.meshgrid(t, t)
    v = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], 1)
    idx = np.arange(X.size).reshape(n + 1, n + 1)
    a, b, c, d = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    tris = np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])
    uv = (v[:, :2] + 1) / 2
    return Mesh(v, tris, uv)


def quad_camera(size, dist=2.0):
    # maps x in [-1, 1] onto [0, size] exactly
    return Camera(size * dist / 2.0, t_z=dist)


def smooth_texture(size, seed=0):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / size
    out = np.zeros((size, size, 3))
    for c in range(3):
        a, b, p = rng.uniform(1, 3, size=3)
        out[:, :, c] = 0.5 + 0.3 * np.sin(2 * np.pi * (a * x + b * y) / 3 + p)
    return out


def test_constant_texture(backend):
    pos = np.array([[1.0, 1.0], [14.0, 2.0], [3.0, 13.0]])
    tex = RasterImage.full(np.full((4, 4, 1), 0.7))
    img = rasterize(pos, np.ones(3), [[0, 1, 2]], TextureSource(tex, np.ones((3, 2))), (16, 16),
                    background=0.25, backend=backend)
    assert img.coverage.sum() > 40
    np.testing.assert_allclose(img.data[img.coverage], 0.7)
    np.testing.assert_array_equal(img.data[~img.coverage], 0.25)


def test_centroid_weights(backend):
    # centroid (2.5, 2.5) is the centre of pixel (2, 2)
    pos = np.array([[0.5, 0.5], [6.5, 0.5], [0.5, 6.5]])
    img = rasterize(pos, np.ones(3), [[0, 1, 2]], VertexAttributes(np.array([0.0, 1.0, 0.0])), (8, 8), backend=backend)
    assert img.data[2, 2, 0] == pytest.approx(1 / 3, abs=1e-12)


@pytest.mark.parametrize("order", [(0, 1), (1, 0)])
def test_depth_test_keeps_nearer(backend, order):
    pos = np.array([[0, 0], [16, 0], [0, 16], [2, 2], [16, 2], [2, 16.0]])
    depth = np.array([1.0, 1, 1, 2, 2, 2])
    attr = np.array([0.2, 0.2, 0.2, 0.9, 0.9, 0.9])
    tris = np.array([[0, 1, 2], [3, 4, 5]])[list(order)]
    img = rasterize(pos, depth, tris, VertexAttributes(attr), (16, 16), backend=backend)
    overlap = np.zeros((16, 16), bool)
    y, x = np.mgrid[0:16, 0:16] + 0.5
    overlap = (x > 2) & (y > 2) & (x + y < 16)
    assert overlap.sum() > 20
    np.testing.assert_allclose(img.data[overlap, 0], 0.2, atol=1e-12)


def test_affine_attribute_exact(backend, rng):
    for _ in range(20):
        pos = rng.uniform(-4, 36, size=(3, 2))
        coef = rng.normal(size=3)
        attr = pos @ coef[:2] + coef[2]
        img = rasterize(pos, None, [[0, 1, 2]], VertexAttributes(attr), (32, 32), backend=backend)
        ys, xs = np.nonzero(img.coverage)
        expected = (xs + 0.5) * coef[0] + (ys + 0.5) * coef[1] + coef[2]
        np.testing.assert_allclose(img.data[ys, xs, 0], expected, atol=1e-6)


def _ray_hits(points_cam, f, pp, px, py):
    """Ray-triangle intersection depth for pixel centres, inf on miss."""
    d = np.stack([(px - pp[0]) / f, (py - pp[1]) / f, np.ones_like(px)], -1)
    a, b, c = points_cam
    e1, e2 = b - a, c - a
    n = np.cross(e1, e2)
    t = (a @ n) / (d @ n)
    p = d * t[..., None]
    # barycentric inside test on the 3D hit point
    def side(u, v):
        return np.einsum("...i,i->...", np.cross(v - u, p - u), n)
    inside = (side(a, b) > 0) & (side(b, c) > 0) & (side(c, a) > 0)
    return np.where(inside & (t > 0), t, np.inf), p


@pytest.mark.filterwarnings("ignore::texcomplete.errors.EmptyRasterWarning")  # slivers may miss every centre
def test_perspective_interpolation_matches_ray_cast(backend, rng):
    f, size = 40.0, 32
    pp = (size / 2, size / 2)
    for _ in range(10):
        pts = rng.uniform([-1, -1, 3], [1, 1, 6], size=(3, 3))
        pos = f * pts[:, :2] / pts[:, 2:] + pp
        img = rasterize(pos, pts[:, 2], [[0, 1, 2]], VertexAttributes(pts), (size, size), backend=backend)
        ys, xs = np.nonzero(img.coverage)
        _, hit = _ray_hits(pts, f, pp, xs + 0.5, ys + 0.5)
        np.testing.assert_allclose(img.data[ys, xs], hit, atol=1e-9)


def test_depth_probe_against_ray_cast(backend, rng):
    """Random pairs of intersecting/overlapping 3D triangles; z-buffer winner
    must equal the nearest ray hit at every pixel both interpolations agree on."""
    f, size = 40.0, 32
    pp = np.array([size / 2, size / 2])
    checked = 0
    for _ in range(20):
        tri = rng.uniform([-1, -1, 3], [1, 1, 6], size=(6, 3))
        pos = f * tri[:, :2] / tri[:, 2:] + pp
        frag = rasterize_fragments(pos, tri[:, 2], [[0, 1, 2], [3, 4, 5]], (size, size), backend=backend)
        ys, xs = np.nonzero(frag.coverage)
        t0, _ = _ray_hits(tri[:3], f, pp, xs + 0.5, ys + 0.5)
        t1, _ = _ray_hits(tri[3:], f, pp, xs + 0.5, ys + 0.5)
        both = np.isfinite(t0) & np.isfinite(t1) & (np.abs(t0 - t1) > 1e-9)
        expect = np.where(t0 < t1, 0, 1)
        np.testing.assert_array_equal(frag.tri_id[ys, xs][both], expect[both])
        checked += both.sum()
    assert checked > 100


def test_back_side_rendered_after_half_turn(backend):
    # two parallel faces of a slab: front at z=-0.5, back at z=+0.5
    v = np.array([[-1, -1, -0.5], [1, -1, -0.5], [0, 1, -0.5], [-1, -1, 0.5], [1, -1, 0.5], [0, 1, 0.5]])
    m = Mesh(v, np.array([[0, 2, 1], [3, 4, 5]]), np.zeros((6, 2)))
    cam = Camera(16.0, r_y=np.pi, t_z=4.0)
    p = project(m, cam, (32, 32))
    img = rasterize(p.coords_2d, p.depths, m.triangles, VertexAttributes(np.repeat([0.0, 1.0], 3)), (32, 32),
                    backend=backend)
    # after the half turn the face at +0.5 is the near one
    assert img.coverage.sum() > 30
    np.testing.assert_allclose(img.data[img.coverage, 0], 1.0, atol=1e-12)


def test_winding_independent_coverage(backend, rng):
    for _ in range(10):
        pos = rng.uniform(0, 24, size=(3, 2))
        a = rasterize_fragments(pos, None, [[0, 1, 2]], (24, 24), backend=backend)
        b = rasterize_fragments(pos, None, [[0, 2, 1]], (24, 24), backend=backend)
        np.testing.assert_array_equal(a.coverage, b.coverage)
        np.testing.assert_allclose(a.bary[a.coverage], b.bary[b.coverage][:, [0, 2, 1]], atol=1e-12)


def test_shared_edges_drawn_once(backend):
    # vertices on pixel centres put many samples exactly on shared edges
    m = frontal_quad(4)
    pos = m.vertices[:, :2] * 8 + 8.5
    frag = rasterize_fragments(pos, None, m.triangles, (18, 18), backend=backend)
    assert frag.overdraw.max() == 1
    # the square spans [0.5, 16.5]^2; top-left ownership keeps the left and
    # top border centres and drops the right and bottom ones
    assert frag.coverage[:16, :16].all()
    assert frag.coverage.sum() == 16 * 16


def test_backends_agree(head, head_tex, rng):
    pytest.importorskip("numba")
    p = project(head, input_camera(), (96, 96))
    a = rasterize_fragments(p.coords_2d, p.depths, head.triangles, (96, 96), backend="numba")
    b = rasterize_fragments(p.coords_2d, p.depths, head.triangles, (96, 96), backend="numpy")
    np.testing.assert_array_equal(a.tri_id, b.tri_id)
    np.testing.assert_allclose(a.bary, b.bary, atol=1e-12)
    np.testing.assert_array_equal(a.overdraw, b.overdraw)


def test_render_frontal_quad_is_bilinear_resample(backend):
    size, tsize = 32, 64
    tex = smooth_texture(tsize)
    img = render_view(frontal_quad(2), quad_camera(size), RasterImage.full(tex), (size, size), backend)
    assert img.coverage.all()
    c = (np.arange(size) + 0.5) * tsize / size - 0.5
    yy, xx = np.meshgrid(c, c, indexing="ij")
    oracle = np.stack([map_coordinates(tex[:, :, k], [yy, xx], order=1, mode="nearest") for k in range(3)], -1)
    assert np.abs(img.data - oracle).max() < 2 / 255


def test_black_texture(backend):
    img = render_view(frontal_quad(), quad_camera(16), RasterImage.full(np.zeros((8, 8, 3))), (16, 16), backend)
    assert img.coverage.any()
    assert np.all(img.data == 0)


def test_unwrap_round_trip_frontal(backend):
    size = 64
    tex = smooth_texture(size, seed=3)
    mesh = frontal_quad(3)
    cam = quad_camera(size)
    img = render_view(mesh, cam, RasterImage.full(tex), (size, size), backend)
    img = RasterImage(q8(img.data), img.coverage)
    back = unwrap_to_uv(mesh, project(mesh, cam, (size, size)), img, (size, size), backend)
    assert back.coverage.all()
    assert np.abs(back.data - tex).max() <= 3 / 255


def test_unwrap_constant_source(head, backend):
    src = RasterImage.full(np.full((64, 64, 3), 0.4))
    uv = unwrap_to_uv(head, project(head, input_camera(), (64, 64)), src, (64, 64), backend)
    np.testing.assert_allclose(uv.data[uv.coverage], 0.4)


def test_unwrap_clamps_out_of_frame_samples(backend):
    mesh = frontal_quad()
    src = np.zeros((8, 8, 3))
    src[:, -1] = 1.0
    coords = np.array([[100.0, 4], [100, 4], [100, 4], [100, 4]])  # far right of the frame
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        uv = unwrap_to_uv(mesh, coords, src, (8, 8), backend)
    np.testing.assert_allclose(uv.data[uv.coverage], 1.0)


def test_render_unwrap_render_idempotent_plane(backend):
    size = 48
    tex = smooth_texture(size, seed=5)
    mesh, cam = frontal_quad(3), quad_camera(size)
    proj = project(mesh, cam, (size, size))
    first = render_view(mesh, cam, RasterImage.full(tex), (size, size), backend)
    second = render_view(mesh, cam, unwrap_to_uv(mesh, proj, first, (size, size), backend), (size, size), backend)
    assert first.coverage.all() and second.coverage.all()
    assert np.abs(first.data - second.data).max() <= 4 / 255


@pytest.mark.parametrize("which", ["input", "frontal"])
def test_render_unwrap_render_idempotent_head(head, head_tex, backend, which):
    # Unwrapping has no occlusion test, so texels hidden behind an occluding
    # contour carry the occluder's colour and bleed into the 1 px band along
    # it. The fixpoint is checked off that band.
    from scipy.ndimage import binary_erosion

    from texcomplete.fixtures import frontal_camera

    size = 128
    cam = input_camera() if which == "input" else frontal_camera()
    proj = project(head, cam, (size, size))
    first = render_view(head, cam, RasterImage.full(head_tex), (size, size), backend)
    uv = unwrap_to_uv(head, proj, first, (256, 256), backend)
    second = render_view(head, cam, uv, (size, size), backend)
    np.testing.assert_array_equal(first.coverage, second.coverage)
    inner = binary_erosion(first.coverage, iterations=1)
    assert np.abs(first.data - second.data)[inner].max() <= 4 / 255


def test_overlapping_charts_warn(backend):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])
    uv = np.array([[0.1, 0.1], [0.9, 0.1], [0.1, 0.9], [0.9, 0.9]])
    m = Mesh(v, np.array([[0, 1, 2], [0, 1, 3]]), uv)
    with pytest.warns(UvOverlapWarning):
        unwrap_to_uv(m, np.zeros((4, 2)) + 2, np.ones((4, 4, 3)), (16, 16), backend)


def test_empty_raster_warns(backend):
    with pytest.warns(EmptyRasterWarning):
        img = rasterize(np.array([[100.0, 100], [110, 100], [100, 110]]), None, [[0, 1, 2]],
                        VertexAttributes(np.ones(3)), (8, 8), backend=backend)
    assert not img.coverage.any()


def test_bilinear_coverage_renormalizes():
    img = np.array([[[1.0], [0.0]], [[1.0], [0.0]]])
    cov = np.array([[True, False], [True, False]])
    vals, ok = sample_bilinear(img, np.array([1.0]), np.array([1.0]), cov)
    assert ok[0] and vals[0, 0] == 1.0
    vals, _ = sample_bilinear(img, np.array([1.0]), np.array([1.0]))
    assert vals[0, 0] == 0.5
    _, ok = sample_bilinear(img, np.array([1.9]), np.array([1.0]), np.zeros((2, 2), bool))
    assert not ok[0]
