import numpy as np
import pytest
from scipy.ndimage import distance_transform_cdt

from conftest import sphere_cameras
from texcomplete.errors import MismatchedSize, NonPositiveDepth, ViewError
from texcomplete.fixtures import frontal_camera, head_mesh, head_texture, input_camera, input_image, view_cameras
from texcomplete.genmodel import AffineGenerator, PluginSet, fit_encoder, make_toy_plugins
from texcomplete.geometry import Camera, project
from texcomplete.losses import LossWeights
from texcomplete.optim import OptimOptions
from texcomplete.pipeline import (
    CompletionOptions,
    Similarity,
    ViewPlan,
    blend,
    default_view_plan,
    feather_mask,
    fit_similarity,
    frame_similarity,
    frontalize,
    load_landmark_template,
    match_moments,
    run_completion,
)
from texcomplete.raster import RasterImage, render_view

# ---------------------------------------------------------------- blending


def rimg(data, cov=None):
    data = np.asarray(data, dtype=float)
    return RasterImage(data, np.ones(data.shape[:2], bool) if cov is None else cov)


def test_blend_idempotent(rng):
    a = rimg(rng.random((16, 16, 3)))
    dom = rng.random((16, 16)) > 0.5
    out = blend(a, a.copy(), dom, np.ones((16, 16), bool), feather_px=3.0)
    np.testing.assert_array_equal(out.data, a.data)


def test_blend_hard_form_takes_new(rng):
    a = rimg(rng.random((8, 8, 3)))
    b = rimg(rng.random((8, 8, 3)))
    out = blend(a, b, np.ones((8, 8), bool), None, feather_px=0.0)
    np.testing.assert_array_equal(out.data, b.data)


def test_moment_matching_hand_example():
    # new channel: mean 0.8, std 0.1 over the overlap; prev: mean 0.4, std 0.2
    new = np.array([0.7, 0.9, 0.7, 0.9, 0.9])
    prev = np.array([0.2, 0.6, 0.2, 0.6, 0.0])
    region = np.array([True, True, True, True, False])
    out = match_moments(prev.reshape(1, -1, 1), new.reshape(1, -1, 1), region.reshape(1, -1))
    assert out[0, 4, 0] == pytest.approx(0.6, abs=1e-9)
    assert out[0, 4, 0] == pytest.approx(0.4 + 0.2 * (0.9 - 0.8) / 0.1, abs=1e-9)


def test_moment_matching_constant_guard():
    new = np.full((1, 4, 1), 0.3)
    prev = np.array([0.1, 0.2, 0.3, 0.4]).reshape(1, 4, 1)
    out = match_moments(prev, new, np.ones((1, 4), bool))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, prev.mean())


def feather_radius(f):
    return int(f + 0.5)  # scipy's window radius for sigma = f / 2, truncate = 2


def test_feather_alpha_range_and_support(rng):
    m = np.zeros((40, 40), bool)
    m[10:25, 12:30] = True
    m[30, 5] = True
    dist = distance_transform_cdt(~m, metric="chessboard")
    for f in (0.5, 2.0, 3.5, 5.0):
        a = feather_mask(m, f)
        assert a.min() >= 0.0 and a.max() <= 1.0
        r = feather_radius(f)
        assert np.all(a[dist > r] == 0.0)
        assert np.all(a[(dist > 0) & (dist <= r)] > 0.0)
    np.testing.assert_array_equal(feather_mask(m, 0.0), m.astype(float))


def test_blend_mismatched_size():
    with pytest.raises(MismatchedSize):
        blend(rimg(np.zeros((4, 4, 3))), rimg(np.zeros((4, 5, 3))), np.ones((4, 4), bool))
    with pytest.raises(MismatchedSize):
        blend(rimg(np.zeros((4, 4, 3))), rimg(np.zeros((4, 4, 3))), np.ones((4, 5), bool))


def test_blend_empty_overlap_skips_normalization(rng, caplog):
    a, b = rimg(rng.random((8, 8, 3))), rimg(rng.random((8, 8, 3)))
    with caplog.at_level("INFO"):
        out = blend(a, b, np.ones((8, 8), bool), np.zeros((8, 8), bool), 0.0)
    np.testing.assert_array_equal(out.data, b.data)
    assert "overlap" in caplog.text


def test_blend_fills_uncovered_prev(rng):
    cov = np.zeros((8, 8), bool)
    cov[:, :4] = True
    a = RasterImage(np.where(cov[:, :, None], 0.2, 0.0) * np.ones((1, 1, 3)), cov)
    b = rimg(np.full((8, 8, 3), 0.9))
    dom = np.zeros((8, 8), bool)
    dom[:, 6:] = True
    out = blend(a, b, dom, None, feather_px=2.0)
    assert out.coverage[:, :4].all() and out.coverage[:, 6:].all()
    np.testing.assert_array_equal(out.data[:, 6:], 0.9)
    np.testing.assert_array_equal(out.data[:, :2], 0.2)


# ---------------------------------------------------------------- alignment


def test_similarity_fit_recovers_transform(rng):
    src = rng.uniform(0, 100, (68, 2))
    th, s, t = 0.3, 0.7, np.array([5.0, -3.0])
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    dst = s * src @ R.T + t
    sim = fit_similarity(src, dst)
    np.testing.assert_allclose(sim.apply(src), dst, atol=1e-9)
    np.testing.assert_allclose(sim.inverse().apply(dst), src, atol=1e-9)


def test_similarity_never_reflects(rng):
    src = rng.uniform(0, 10, (20, 2))
    dst = src * [-1, 1]
    sim = fit_similarity(src, dst)
    assert np.linalg.det(sim.scale * np.asarray(sim.rotation)) > 0


def test_template_shape():
    tpl = load_landmark_template()
    assert tpl.shape == (68, 2)
    assert tpl.min() > 0 and tpl.max() < 1


def test_frame_falls_back_to_scale_without_landmarks(sphere):
    proj = project(sphere, Camera(60.0, t_z=4.0), (128, 128))
    sim = frame_similarity(proj.coords_2d, sphere, (128, 128), (64, 64), CompletionOptions(), load_landmark_template())
    np.testing.assert_allclose(sim.apply(np.array([[128.0, 64.0]])), [[64.0, 32.0]])


def test_default_view_plan_layout():
    plan = default_view_plan(input_camera(), frontal_camera())
    assert len(plan) == 6
    assert plan.cameras[0] == input_camera()
    rx = [c.r_x for c in plan.cameras[1:]]
    ry = [c.r_y for c in plan.cameras[1:]]
    np.testing.assert_allclose(np.rad2deg(rx), [-30, -30, -30, 0, 0])
    np.testing.assert_allclose(np.rad2deg(ry), [0, -45, 45, -45, 45])


def test_view_plan_non_empty():
    with pytest.raises(ValueError):
        ViewPlan([], frontal_camera())


# ---------------------------------------------------------------- progressive loop


@pytest.fixture(scope="module")
def head_run():
    mesh = head_mesh()
    image = input_image(mesh, size=128)
    tpl = load_landmark_template()
    plugins = make_toy_plugins(0, 64, (64, 64), tpl * 64)
    opts = CompletionOptions(uv_size=(128, 128), feather_px=2.0, optim=OptimOptions(max_iters=60))
    plan = default_view_plan(input_camera(), frontal_camera())
    return mesh, image, plugins, opts, plan, run_completion(image, mesh, plan, plugins, LossWeights(), opts)


def test_run_shapes_and_finiteness(head_run):
    *_, res = head_run
    assert res.completed_uv.data.shape == (128, 128, 3)
    assert len(res.per_view) == 6 and len(res.history) == 6
    for art in res.per_view:
        for arr in (art.rendered.data, art.mask.data, art.generated, art.partial_uv.data):
            assert np.all(np.isfinite(arr))
        assert art.generated.shape == (64, 64, 3)
        assert set(np.unique(art.mask.data)) <= {0.0, 1.0}


def test_run_progressive_coverage(head_run):
    *_, res = head_run
    prev = res.input_uv.coverage
    for uv in res.history:
        assert np.all(uv.coverage >= prev)
        prev = uv.coverage


def test_run_fills_union_of_view_coverage(head_run):
    *_, res = head_run
    union = np.any([v.coverage for v in res.visibility], axis=0)
    assert np.all(res.completed_uv.coverage[union])


def test_run_input_fidelity(head_run):
    _, _, _, opts, _, res = head_run
    region = res.dominance_plain.masks[0] & (res.visibility[0].values > opts.t1)
    # alpha of later views reaches round(feather) px into the input region
    band = distance_transform_cdt(res.dominance.masks[0], metric="chessboard") <= feather_radius(opts.feather)
    keep = region & ~band
    assert keep.sum() > 1000
    diff = np.abs(res.completed_uv.data - res.input_uv.data).max(-1)
    assert diff[keep].max() <= 4 / 255


def test_run_input_view_not_blended(head_run):
    *_, res = head_run
    np.testing.assert_array_equal(res.history[0].data, res.input_uv.data)
    assert res.per_view[0].overlap_pixels == 0


def test_run_deterministic(head_run):
    mesh, image, plugins, opts, plan, res = head_run
    again = run_completion(image, mesh, plan, plugins, LossWeights(), opts)
    np.testing.assert_array_equal(again.completed_uv.data, res.completed_uv.data)


def test_single_view_degenerate_run():
    """Only the input view, a generator that can represent its own render:
    even re-projecting the input reproduces T0 on input coverage."""
    mesh = head_mesh()
    image = input_image(mesh, size=64)
    plan = ViewPlan([input_camera()], frontal_camera())
    base = make_toy_plugins(0, 16, (64, 64))
    opts = CompletionOptions(uv_size=(128, 128), align=False, optim=OptimOptions(max_iters=100))
    # what the loop will ask the generator for at i = 0
    target = render_view(mesh, input_camera(), run_completion(image, mesh, plan, base, LossWeights(), opts).input_uv,
                         (64, 64)).data
    A = np.concatenate([(target.reshape(-1) - 0.5)[:, None], base.generator.A], axis=1)
    gen = AffineGenerator(A, base.generator.b, base.generator.out_shape)
    plugins = PluginSet(gen, base.embedder, base.perceptual, base.landmarker, fit_encoder(gen, 200, 1))
    for reproject in (False, True):
        opts.reproject_input = reproject
        res = run_completion(image, mesh, plan, plugins, LossWeights(1, 0, 0, 0), opts)
        cov = res.input_uv.coverage
        # compare where the input view actually sees the surface
        seen = cov & (res.visibility[0].values > 0.3)
        assert np.abs(res.completed_uv.data - res.input_uv.data).max(-1)[seen].max() <= 4 / 255


def test_sphere_two_view_union(sphere):
    cams = sphere_cameras()
    tex = np.random.default_rng(0).random((8, 8, 3)).repeat(16, 0).repeat(16, 1)
    image = render_view(sphere, cams[0], RasterImage.full(tex), (64, 64))
    mirror = Camera(cams[0].f, 0.0, -cams[0].r_y, 0.0, 0.0, 0.0, cams[0].t_z)
    plan = ViewPlan([cams[0], mirror], cams[0])
    plugins = make_toy_plugins(0, 16, (64, 64))
    res = run_completion(image, sphere, plan, plugins, LossWeights(),
                         CompletionOptions(uv_size=(64, 64), optim=OptimOptions(max_iters=10)))
    union = res.visibility[0].coverage | res.visibility[1].coverage
    assert np.all(res.completed_uv.coverage[union])
    assert np.all(np.isfinite(res.completed_uv.data))


def test_view_error_carries_index(head_run):
    mesh, image, plugins, opts, plan, _ = head_run
    behind = Camera(plan.cameras[0].f, 0, 0, 0, 0, 0, 0.5)
    bad = ViewPlan(plan.cameras[:2] + [behind], plan.frontal_camera)
    with pytest.raises((ViewError, NonPositiveDepth)) as exc:
        run_completion(image, mesh, bad, plugins, LossWeights(), opts)
    if isinstance(exc.value, ViewError):
        assert exc.value.view == 2


# ---------------------------------------------------------------- frontalization


@pytest.fixture(scope="module")
def front_setup():
    mesh = head_mesh()
    tex = RasterImage.full(head_texture())
    tpl = load_landmark_template()
    plugins = make_toy_plugins(0, 64, (64, 64), tpl * 64)
    opts = CompletionOptions(uv_size=(128, 128), optim=OptimOptions(max_iters=200))
    return mesh, tex, tpl, plugins, opts


def test_frontalize_self_reconstruction(front_setup):
    mesh, tex, _, plugins, opts = front_setup
    _, _, rendered = frontalize(tex, mesh, frontal_camera(), plugins, LossWeights(), opts, frame_size=(128, 128))
    A = np.concatenate([(rendered.data.reshape(-1) - 0.5)[:, None], plugins.generator.A], axis=1)
    gen = AffineGenerator(A, plugins.generator.b, plugins.generator.out_shape)
    exact = PluginSet(gen, plugins.embedder, plugins.perceptual, plugins.landmarker, fit_encoder(gen, 600, 1))
    out, _, r2 = frontalize(tex, mesh, frontal_camera(), exact, LossWeights(1, 0, 0, 0), opts, frame_size=(128, 128))
    assert np.abs(out - r2.data).max() < 1e-3


def test_frontalize_zero_weights_is_encoder_init(front_setup):
    mesh, tex, _, plugins, opts = front_setup
    out, res, rendered = frontalize(tex, mesh, frontal_camera(), plugins, LossWeights(0, 0, 0, 0), opts,
                                    frame_size=(128, 128))
    np.testing.assert_array_equal(out, plugins.generator(plugins.encoder(rendered.data)))


def test_frontalize_landmarks_follow_mesh(front_setup):
    mesh, tex, tpl, plugins, opts = front_setup
    out, _, _ = frontalize(tex, mesh, frontal_camera(), plugins, LossWeights(0.01, 0, 0, 1), opts,
                           frame_size=(128, 128))
    proj = project(mesh, frontal_camera(), (128, 128))
    sim = frame_similarity(proj.coords_2d, mesh, (128, 128), (64, 64), opts, tpl)
    target = sim.apply(proj.coords_2d)[mesh.landmark_indices]
    err = np.linalg.norm(plugins.landmarker(out) - target, axis=1).mean()
    assert err < 2.0
