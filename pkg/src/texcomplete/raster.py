"""Barycentric triangle rasterization in both directions.

``render_view`` draws a UV texture onto the image plane of a camera and
``unwrap_to_uv`` does the reverse: it rasterizes in UV space while sampling
colours from a posed image. Both go through :func:`rasterize`.

The per-pixel coverage loop is the hot kernel. It exists twice, once as a
numba ``@njit`` loop and once as a vectorized numpy loop over triangles;
``texcomplete._accel.BACKEND`` picks one at import time.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import EmptyRasterWarning, ShapeMismatch, UvOverlapWarning
from .geometry import Camera, Mesh, ProjectedMesh, project


@dataclass
class RasterImage:
    """Dense H x W x C grid plus a separate coverage mask.

    Uncovered pixels hold 0. Keeping coverage apart lets a black texel be
    told apart from a texel nobody wrote.
    """

    data: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ShapeMismatch(f"raster data must be H x W x C, got {data.shape}")
        cov = np.asarray(self.coverage, dtype=bool)
        if cov.shape != data.shape[:2]:
            raise ShapeMismatch(f"coverage {cov.shape} does not match data {data.shape[:2]}")
        self.data = data
        self.coverage = cov

    @classmethod
    def full(cls, data) -> "RasterImage":
        data = np.asarray(data, dtype=np.float64)
        return cls(data, np.ones(data.shape[:2], dtype=bool))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)

    def copy(self) -> "RasterImage":
        return RasterImage(self.data.copy(), self.coverage.copy())


@dataclass(frozen=True)
class VertexAttributes:
    """Per-vertex values (n x C, or n) interpolated across each triangle."""

    values: np.ndarray


@dataclass(frozen=True)
class TextureSource:
    """Bilinear lookups into ``texture`` at per-vertex ``coords``.

    ``coords`` are continuous pixel coordinates of the texture (pixel (i, j)
    has its centre at x = j + 0.5, y = i + 0.5).
    """

    texture: RasterImage
    coords: np.ndarray


@dataclass
class Fragments:
    tri_id: np.ndarray  # H x W, -1 where nothing was drawn
    bary: np.ndarray  # H x W x 3, weights in the triangle's own vertex order
    overdraw: np.ndarray  # H x W, number of accepted writes

    @property
    def coverage(self) -> np.ndarray:
        return self.tri_id >= 0


# --------------------------------------------------------------------------
# kernels


@_accel.njit(cache=True)
def _raster_kernel_numba(pos, inv_z, tris, width, height, depth_test, perspective):
    tri_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    zbuf = np.full((height, width), np.inf)
    overdraw = np.zeros((height, width), dtype=np.int32)
    for t in range(tris.shape[0]):
        i0 = tris[t, 0]
        i1 = tris[t, 1]
        i2 = tris[t, 2]
        ax = pos[i0, 0]
        ay = pos[i0, 1]
        bx = pos[i1, 0]
        by = pos[i1, 1]
        cx = pos[i2, 0]
        cy = pos[i2, 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if not (area != 0.0 and np.isfinite(area)):
            continue
        swapped = area < 0.0
        if swapped:
            bx, cx = cx, bx
            by, cy = cy, by
            area = -area
        za = inv_z[i0]
        zb = inv_z[i2] if swapped else inv_z[i1]
        zc = inv_z[i1] if swapped else inv_z[i2]
        # top-left ownership per edge: (dy == 0 and dx > 0) or dy < 0
        tl_bc = (cy - by < 0.0) or (cy - by == 0.0 and cx - bx > 0.0)
        tl_ca = (ay - cy < 0.0) or (ay - cy == 0.0 and ax - cx > 0.0)
        tl_ab = (by - ay < 0.0) or (by - ay == 0.0 and bx - ax > 0.0)
        xmin = max(0, int(np.ceil(min(ax, bx, cx) - 0.5)))
        xmax = min(width - 1, int(np.floor(max(ax, bx, cx) - 0.5)))
        ymin = max(0, int(np.ceil(min(ay, by, cy) - 0.5)))
        ymax = min(height - 1, int(np.floor(max(ay, by, cy) - 0.5)))
        for y in range(ymin, ymax + 1):
            py = y + 0.5
            for x in range(xmin, xmax + 1):
                px = x + 0.5
                e_bc = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                if e_bc < 0.0 or (e_bc == 0.0 and not tl_bc):
                    continue
                e_ca = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                if e_ca < 0.0 or (e_ca == 0.0 and not tl_ca):
                    continue
                e_ab = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                if e_ab < 0.0 or (e_ab == 0.0 and not tl_ab):
                    continue
                wa = e_bc / area
                wb = e_ca / area
                wc = e_ab / area
                if perspective:
                    iz = wa * za + wb * zb + wc * zc
                    wa = wa * za / iz
                    wb = wb * zb / iz
                    wc = wc * zc / iz
                    depth = 1.0 / iz
                else:
                    depth = wa / za + wb / zb + wc / zc
                if depth_test:
                    if not (depth < zbuf[y, x]):
                        continue
                    zbuf[y, x] = depth
                tri_id[y, x] = t
                bary[y, x, 0] = wa
                if swapped:
                    bary[y, x, 1] = wc
                    bary[y, x, 2] = wb
                else:
                    bary[y, x, 1] = wb
                    bary[y, x, 2] = wc
                overdraw[y, x] += 1
    return tri_id, bary, overdraw


def _raster_kernel_numpy(pos, inv_z, tris, width, height, depth_test, perspective):
    tri_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    zbuf = np.full((height, width), np.inf)
    overdraw = np.zeros((height, width), dtype=np.int32)
    p = pos[tris]  # m x 3 x 2
    area_all = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (
        p[:, 2, 0] - p[:, 0, 0]
    )
    lo = np.ceil(p.min(axis=1) - 0.5)
    hi = np.floor(p.max(axis=1) - 0.5)
    for t in np.flatnonzero((area_all != 0.0) & np.isfinite(area_all)):
        xmin, ymin = max(0, int(lo[t, 0])), max(0, int(lo[t, 1]))
        xmax, ymax = min(width - 1, int(hi[t, 0])), min(height - 1, int(hi[t, 1]))
        if xmin > xmax or ymin > ymax:
            continue
        i0, i1, i2 = tris[t]
        swapped = area_all[t] < 0.0
        if swapped:
            i1, i2 = i2, i1
        ax, ay = pos[i0]
        bx, by = pos[i1]
        cx, cy = pos[i2]
        area = abs(area_all[t])
        za, zb, zc = inv_z[i0], inv_z[i1], inv_z[i2]
        px = np.arange(xmin, xmax + 1) + 0.5
        py = (np.arange(ymin, ymax + 1) + 0.5)[:, None]
        e_bc = (cx - bx) * (py - by) - (cy - by) * (px - bx)
        e_ca = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
        e_ab = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        tl_bc = (cy - by < 0.0) or (cy - by == 0.0 and cx - bx > 0.0)
        tl_ca = (ay - cy < 0.0) or (ay - cy == 0.0 and ax - cx > 0.0)
        tl_ab = (by - ay < 0.0) or (by - ay == 0.0 and bx - ax > 0.0)
        inside = ((e_bc > 0.0) | ((e_bc == 0.0) & tl_bc)) & ((e_ca > 0.0) | ((e_ca == 0.0) & tl_ca))
        inside &= (e_ab > 0.0) | ((e_ab == 0.0) & tl_ab)
        if not inside.any():
            continue
        wa, wb, wc = e_bc / area, e_ca / area, e_ab / area
        if perspective:
            iz = wa * za + wb * zb + wc * zc
            wa, wb, wc = wa * za / iz, wb * zb / iz, wc * zc / iz
            depth = 1.0 / iz
        else:
            depth = wa / za + wb / zb + wc / zc
        win = (slice(ymin, ymax + 1), slice(xmin, xmax + 1))
        if depth_test:
            inside &= depth < zbuf[win]
            zbuf[win] = np.where(inside, depth, zbuf[win])
        tri_id[win][inside] = t
        if swapped:
            wb, wc = wc, wb
        bary[win][inside] = np.stack([wa[inside], wb[inside], wc[inside]], axis=-1)
        overdraw[win] += inside
    return tri_id, bary, overdraw


def rasterize_fragments(positions_2d, depths, triangles, out_size, depth_test=True, perspective=True, backend=None):
    """Run the coverage kernel and return per-pixel triangle ids and weights.

    ``depths`` may be None, in which case depth testing and perspective
    correction are both off.
    """
    width, height = int(out_size[0]), int(out_size[1])
    pos = np.ascontiguousarray(positions_2d, dtype=np.float64)
    tris = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
    if depths is None:
        inv_z = np.ones(len(pos))
        depth_test = perspective = False
    else:
        inv_z = 1.0 / np.ascontiguousarray(depths, dtype=np.float64)
    backend = backend or _accel.BACKEND
    kernel = _raster_kernel_numba if backend == "numba" else _raster_kernel_numpy
    tri_id, bary, overdraw = kernel(pos, inv_z, tris, width, height, bool(depth_test), bool(perspective))
    return Fragments(tri_id, bary, overdraw)


# --------------------------------------------------------------------------
# sampling and attribute evaluation


def sample_bilinear(image, x, y, coverage=None):
    """Bilinear lookup at continuous pixel coordinates with edge clamping.

    With ``coverage`` given, uncovered texels get zero weight and the
    remaining weights are renormalized, so chart borders do not bleed the
    background in. Returns (values k x C, valid k).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w = img.shape[:2]
    fx = np.clip(np.asarray(x, dtype=np.float64) - 0.5, 0.0, w - 1.0)
    fy = np.clip(np.asarray(y, dtype=np.float64) - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(fx).astype(np.int64), w - 1)
    y0 = np.minimum(np.floor(fy).astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (fx - x0)[:, None]
    ay = (fy - y0)[:, None]
    corners = ((y0, x0, (1 - ax) * (1 - ay)), (y0, x1, ax * (1 - ay)), (y1, x0, (1 - ax) * ay), (y1, x1, ax * ay))
    if coverage is None:
        out = sum(wgt * img[yy, xx] for yy, xx, wgt in corners)
        return out, np.ones(len(fx), dtype=bool)
    cov = np.asarray(coverage, dtype=np.float64)
    num = np.zeros((len(fx), img.shape[2]))
    den = np.zeros((len(fx), 1))
    for yy, xx, wgt in corners:
        c = cov[yy, xx][:, None] * wgt
        num += c * img[yy, xx]
        den += c
    valid = den[:, 0] > 1e-12
    out = np.zeros_like(num)
    out[valid] = num[valid] / den[valid]
    return out, valid


def _interpolate(frag: Fragments, triangles, values):
    mask = frag.coverage
    ids = frag.tri_id[mask]
    b = frag.bary[mask]
    corner_vals = values[triangles[ids]]  # k x 3 x C
    return mask, np.einsum("kj,kjc->kc", b, corner_vals)


def rasterize(
    positions_2d,
    depths,
    triangles,
    attr_source,
    out_size,
    depth_test=True,
    perspective=True,
    background=0.0,
    backend=None,
    return_fragments=False,
):
    """Rasterize triangles and evaluate ``attr_source`` at covered pixel centres.

    ``attr_source`` is a :class:`VertexAttributes` (barycentric interpolation)
    or a :class:`TextureSource` (interpolated lookup coords, then bilinear).
    """
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    frag = rasterize_fragments(positions_2d, depths, triangles, out_size, depth_test, perspective, backend)
    width, height = int(out_size[0]), int(out_size[1])
    if isinstance(attr_source, VertexAttributes):
        vals = np.asarray(attr_source.values, dtype=np.float64)
        vals = vals[:, None] if vals.ndim == 1 else vals
        mask, out = _interpolate(frag, triangles, vals)
        channels = vals.shape[1]
        valid = np.ones(len(out), dtype=bool)
    elif isinstance(attr_source, TextureSource):
        tex = attr_source.texture
        mask, coords = _interpolate(frag, triangles, np.asarray(attr_source.coords, dtype=np.float64))
        out, valid = sample_bilinear(tex.data, coords[:, 0], coords[:, 1], tex.coverage)
        channels = tex.channels
    else:
        raise TypeError(f"unsupported attribute source {type(attr_source).__name__}")
    data = np.full((height, width, channels), float(background))
    coverage = np.zeros((height, width), dtype=bool)
    rows, cols = np.nonzero(mask)
    rows, cols = rows[valid], cols[valid]
    data[rows, cols] = out[valid]
    coverage[rows, cols] = True
    if not coverage.any():
        warnings.warn("rasterization covered no pixel", EmptyRasterWarning, stacklevel=2)
    img = RasterImage(data, coverage)
    return (img, frag) if return_fragments else img


def render_projected(mesh: Mesh, coords_2d, depths, texture: RasterImage, image_size, backend=None) -> RasterImage:
    """Draw ``texture`` onto already-projected vertex positions."""
    if not isinstance(texture, RasterImage):
        texture = RasterImage.full(texture)
    uv_px = mesh.tex_coords * np.array([texture.width, texture.height], dtype=np.float64)
    return rasterize(
        coords_2d, depths, mesh.triangles, TextureSource(texture, uv_px), image_size,
        depth_test=True, perspective=True, backend=backend,
    )


def render_view(mesh: Mesh, cam: Camera, texture: RasterImage, image_size, backend=None) -> RasterImage:
    """Render the UV-textured mesh under ``cam`` into a W x H image."""
    proj = project(mesh, cam, image_size)
    return render_projected(mesh, proj.coords_2d, proj.depths, texture, image_size, backend)


def unwrap_to_uv(mesh: Mesh, projected, source_image, uv_size, backend=None) -> RasterImage:
    """Pull colours of a posed image back into UV space.

    ``projected`` is a :class:`ProjectedMesh` or an n x 2 array of image-plane
    vertex positions. No depth test: UV charts are assumed not to overlap.
    """
    coords = projected.coords_2d if isinstance(projected, ProjectedMesh) else np.asarray(projected, dtype=np.float64)
    if not isinstance(source_image, RasterImage):
        source_image = RasterImage.full(source_image)
    w, h = int(uv_size[0]), int(uv_size[1])
    positions = mesh.tex_coords * np.array([w, h], dtype=np.float64)
    img, frag = rasterize(
        positions, None, mesh.triangles, TextureSource(source_image, coords), (w, h),
        depth_test=False, perspective=False, backend=backend, return_fragments=True,
    )
    n_over = int(np.count_nonzero(frag.overdraw > 1))
    if n_over:
        warnings.warn(f"{n_over} UV pixels written by more than one triangle", UvOverlapWarning, stacklevel=2)
    return img
