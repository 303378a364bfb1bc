"""Progressive texture completion and frontalization.

Each view in the plan is rendered from the texture built so far, masked to
the regions that are already trustworthy, projected into the generator and
unwrapped back to UV. Every view then writes only the UV pixels it dominates,
with feathered seams and per-channel colour matching against the input
texture.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import MismatchedSize, TexCompleteError, ViewError
from .geometry import Camera, Mesh, project
from .losses import LossWeights
from .optim import OptimOptions, ProjectionResult
from .optim import project as project_latent
from .raster import RasterImage, render_projected, sample_bilinear, unwrap_to_uv
from .visibility import DEFAULT_T1, build_optimization_mask, dominance_index, visibility_map

log = logging.getLogger(__name__)


@dataclass
class ViewPlan:
    cameras: list  # index 0 is the input view
    frontal_camera: Camera

    def __post_init__(self):
        if not self.cameras:
            raise ValueError("view plan needs at least the input camera")

    def __len__(self):
        return len(self.cameras)


def default_view_plan(input_cam: Camera, frontal_cam: Camera | None = None, yaw_deg=45.0, pitch_deg=-30.0) -> ViewPlan:
    """Input, bottom, bottom-left, bottom-right, left, right.

    Novel views reuse the frontal camera's focal length and translation.
    """
    base = frontal_cam or Camera(input_cam.f, 0.0, 0.0, 0.0, input_cam.t_x, input_cam.t_y, input_cam.t_z)
    y, p = np.deg2rad(yaw_deg), np.deg2rad(pitch_deg)
    poses = [(p, 0.0), (p, -y), (p, y), (0.0, -y), (0.0, y)]
    views = [Camera(base.f, base.r_x + rx, base.r_y + ry, base.r_z, base.t_x, base.t_y, base.t_z) for rx, ry in poses]
    return ViewPlan([input_cam] + views, base)


@dataclass
class CompletionOptions:
    uv_size: tuple = (256, 256)
    t1: float = DEFAULT_T1
    feather_px: float | None = None  # None: 8 px per 1024 UV pixels
    optim: OptimOptions = field(default_factory=OptimOptions)
    align: bool = True
    template: np.ndarray | None = None  # 68 x 2 in [0,1]; None loads the shipped one
    reproject_input: bool = False
    backend: str | None = None

    @property
    def feather(self) -> float:
        if self.feather_px is not None:
            return float(self.feather_px)
        return 8.0 * self.uv_size[0] / 1024.0


@dataclass
class ViewArtifacts:
    index: int
    camera: Camera
    rendered: RasterImage
    mask: RasterImage
    uv_mask: np.ndarray
    generated: np.ndarray
    partial_uv: RasterImage
    projection: ProjectionResult
    landmarks_target: np.ndarray | None
    overlap_pixels: int
    seconds: float


@dataclass
class CompletionResult:
    completed_uv: RasterImage
    input_uv: RasterImage
    visibility: list
    dominance: object  # handicapped
    dominance_plain: object
    per_view: list
    history: list  # the running texture after each view


# --------------------------------------------------------------------------
# alignment


def load_landmark_template() -> np.ndarray:
    with resources.files("texcomplete").joinpath("data/landmark_template.json").open() as fh:
        return np.asarray(json.load(fh)["points"], dtype=np.float64)


@dataclass(frozen=True)
class Similarity:
    """x -> scale * R @ x + shift, on row vectors."""

    scale: float
    rotation: np.ndarray
    shift: np.ndarray

    @classmethod
    def identity(cls, scale=1.0):
        return cls(float(scale), np.eye(2), np.zeros(2))

    def apply(self, pts):
        return self.scale * np.asarray(pts) @ self.rotation.T + self.shift

    def inverse(self) -> "Similarity":
        return Similarity(1.0 / self.scale, self.rotation.T, -(self.shift @ self.rotation) / self.scale)


def fit_similarity(src, dst) -> Similarity:
    """Least-squares similarity (no reflection) mapping src onto dst."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    ms, md = src.mean(0), dst.mean(0)
    a, b = src - ms, dst - md
    cov = b.T @ a / len(src)
    U, S, Vt = np.linalg.svd(cov)
    D = np.diag([1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    R = U @ D @ Vt
    var = (a * a).sum() / len(src)
    scale = float(np.trace(np.diag(S) @ D) / var)
    return Similarity(scale, R, md - scale * ms @ R.T)


def warp_image(image: RasterImage, sim: Similarity, out_size) -> RasterImage:
    """Resample ``image`` into a frame where output = sim(input coords)."""
    w, h = int(out_size[0]), int(out_size[1])
    jj, ii = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    src = sim.inverse().apply(np.stack([jj.ravel(), ii.ravel()], axis=1))
    vals, valid = sample_bilinear(image.data, src[:, 0], src[:, 1], image.coverage)
    inside = (src[:, 0] >= 0) & (src[:, 0] <= image.width) & (src[:, 1] >= 0) & (src[:, 1] <= image.height)
    valid &= inside
    vals[~valid] = 0.0
    return RasterImage(vals.reshape(h, w, -1), valid.reshape(h, w))


def frame_similarity(coords_2d, mesh: Mesh, frame_size, gen_size, opts: CompletionOptions, template) -> Similarity:
    """Map image-plane coordinates of a ``frame_size`` render into the
    generator frame: landmark alignment when possible, else plain scaling."""
    if opts.align and template is not None and len(mesh.landmark_indices) == len(template):
        dst = template * np.asarray(gen_size, dtype=np.float64)
        return fit_similarity(coords_2d[mesh.landmark_indices], dst)
    return Similarity.identity(gen_size[0] / frame_size[0])


# --------------------------------------------------------------------------
# blending


def feather_mask(mask, feather_px: float) -> np.ndarray:
    """Blur a binary mask into alpha in [0, 1] with support of ``feather_px``.

    Gaussian with sigma = feather_px / 2, truncated at two sigma, so alpha is
    exactly 0 more than round(feather_px) pixels from the mask along either
    axis (the separable window is square).
    """
    m = np.asarray(mask, dtype=np.float64)
    if feather_px <= 0:
        return m
    return np.clip(gaussian_filter(m, sigma=feather_px / 2.0, truncate=2.0, mode="nearest"), 0.0, 1.0)


def match_moments(prev_data, new_data, region, eps=1e-6):
    """Affinely remap each channel of ``new_data`` so its mean/std over
    ``region`` equal those of ``prev_data``."""
    out = np.empty_like(new_data)
    for c in range(new_data.shape[2]):
        p, n = prev_data[:, :, c][region], new_data[:, :, c][region]
        scale = p.std() / max(n.std(), eps)
        shift = p.mean() - n.mean() * scale
        out[:, :, c] = new_data[:, :, c] * scale + shift
    return out


def blend(prev_uv: RasterImage, new_uv: RasterImage, dominance_mask, overlap_region=None, feather_px=0.0, eps=1e-6):
    """Stitch ``new_uv`` into ``prev_uv`` over ``dominance_mask``.

    Colour statistics of ``new_uv`` are matched to ``prev_uv`` inside
    ``overlap_region`` (skipped when empty), then the two maps are alpha
    blended with a feathered version of the dominance mask.
    """
    if prev_uv.data.shape != new_uv.data.shape:
        raise MismatchedSize(f"blend: {prev_uv.data.shape} vs {new_uv.data.shape}")
    dom = np.asarray(dominance_mask, dtype=bool)
    if dom.shape != prev_uv.coverage.shape:
        raise MismatchedSize(f"blend: mask {dom.shape} vs uv {prev_uv.coverage.shape}")
    new = new_uv.data
    if overlap_region is not None:
        region = np.asarray(overlap_region, dtype=bool) & prev_uv.coverage & new_uv.coverage
        if region.any():
            new = np.clip(match_moments(prev_uv.data, new, region, eps), 0.0, 1.0)
        else:
            log.info("blend: empty overlap region, colour normalization skipped")
    alpha = feather_mask(dom & new_uv.coverage, feather_px) * new_uv.coverage
    alpha = np.where(prev_uv.coverage, alpha, (alpha > 0).astype(np.float64))[:, :, None]
    prev = prev_uv.data
    out = np.where(alpha == 1.0, new, prev + alpha * (new - prev))
    coverage = prev_uv.coverage | (new_uv.coverage & (alpha[:, :, 0] > 0))
    return RasterImage(out, coverage)


# --------------------------------------------------------------------------
# main loop


def run_completion(input_image, mesh: Mesh, plan: ViewPlan, plugins, weights: LossWeights, opts: CompletionOptions | None = None):
    """Complete the UV texture of ``mesh`` from one posed image."""
    opts = opts or CompletionOptions()
    if not isinstance(input_image, RasterImage):
        input_image = RasterImage.full(input_image)
    template = opts.template if opts.template is not None else (load_landmark_template() if opts.align else None)
    gen_size = plugins.image_size
    in_size = input_image.size
    uv_size = tuple(int(s) for s in opts.uv_size)
    has_lm = len(mesh.landmark_indices) == plugins.landmarker.out_shape[0]

    proj0 = project(mesh, plan.cameras[0], in_size)
    input_uv = unwrap_to_uv(mesh, proj0, input_image, uv_size, opts.backend)

    sim0 = frame_similarity(proj0.coords_2d, mesh, in_size, gen_size, opts, template)
    input_aligned = warp_image(input_image, sim0, gen_size)
    input_feat = plugins.embedder.forward(input_aligned.data)

    vis = []
    for i, cam in enumerate(plan.cameras):
        try:
            vis.append(visibility_map(mesh, cam, uv_size, opts.backend))
        except TexCompleteError as exc:
            raise ViewError(i, exc) from exc
    dom = dominance_index(vis, handicap_input_view=True)
    dom_plain = dominance_index(vis, handicap_input_view=False)

    current = input_uv
    history, per_view = [], []
    for i, cam in enumerate(plan.cameras):
        t0 = time.perf_counter()
        try:
            proj = project(mesh, cam, in_size)
            sim = frame_similarity(proj.coords_2d, mesh, in_size, gen_size, opts, template)
            coords = sim.apply(proj.coords_2d)
            uv_mask, mask = build_optimization_mask(
                vis[0], vis[i], dom.masks[:i], opts.t1, mesh, cam, gen_size, coords_2d=coords, backend=opts.backend
            )
            rendered = render_projected(mesh, coords, proj.depths, current, gen_size, opts.backend)
            lm_target = coords[mesh.landmark_indices] if has_lm else None
            res = project_latent(rendered.data, mask.data, lm_target, input_feat, plugins, weights, opts.optim)
            generated = res.final_image
            partial = unwrap_to_uv(mesh, coords, RasterImage.full(generated), uv_size, opts.backend)
            overlap = dom.masks[0] & dom_plain.masks[i]
            if i == 0 and not opts.reproject_input:
                # the input texture keeps its own dominance region
                overlap_n = 0
            else:
                current = blend(current, partial, dom.masks[i], overlap if i > 0 else dom_plain.masks[0], opts.feather)
                overlap_n = int(np.count_nonzero(overlap & current.coverage))
        except TexCompleteError as exc:
            raise ViewError(i, exc) from exc
        if not np.all(np.isfinite(current.data)):
            raise ViewError(i, TexCompleteError("non-finite values in texture"))
        history.append(current)
        per_view.append(
            ViewArtifacts(i, cam, rendered, mask, uv_mask, generated, partial, res, lm_target, overlap_n, time.perf_counter() - t0)
        )
        log.info("view %d: %d iterations, best total %.6g", i, res.iterations_run, res.best_total)
    return CompletionResult(current, input_uv, vis, dom, dom_plain, per_view, history)


def frontalize(completed_uv: RasterImage, mesh: Mesh, frontal_cam: Camera, plugins, weights: LossWeights, opts: CompletionOptions | None = None, input_feat=None, frame_size=None):
    """Render the completed texture frontally and project it once more.

    Returns (generated image, projection result, aligned frontal render).
    ``frame_size`` is the image size the camera was calibrated for (defaults
    to the generator size).
    """
    opts = opts or CompletionOptions()
    template = opts.template if opts.template is not None else (load_landmark_template() if opts.align else None)
    gen_size = plugins.image_size
    frame_size = tuple(frame_size or gen_size)
    proj = project(mesh, frontal_cam, frame_size)
    sim = frame_similarity(proj.coords_2d, mesh, frame_size, gen_size, opts, template)
    coords = sim.apply(proj.coords_2d)
    rendered = render_projected(mesh, coords, proj.depths, completed_uv, gen_size, opts.backend)
    has_lm = len(mesh.landmark_indices) == plugins.landmarker.out_shape[0]
    lm_target = coords[mesh.landmark_indices] if has_lm else None
    feat = plugins.embedder.forward(rendered.data) if input_feat is None else input_feat
    mask = np.ones(rendered.data.shape[:2] + (1,))
    res = project_latent(rendered.data, mask, lm_target, feat, plugins, weights, opts.optim)
    return res.final_image, res, rendered
