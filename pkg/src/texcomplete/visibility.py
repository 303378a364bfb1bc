"""Normal-based visibility maps, the per-pixel dominance index and
optimization masks.

Visibility is +1 where a surface faces the camera, 0 edge-on, -1 facing away.
The score uses the homogenized normalized image coordinate [x/z, y/z, 1] as
the viewing direction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MismatchedSize
from .geometry import Camera, Mesh, project, vertex_normals
from .raster import RasterImage, VertexAttributes, rasterize, render_projected

DEFAULT_T1 = 0.3


@dataclass
class VisibilityMap:
    values: np.ndarray  # h x w, in [-1, 1] on coverage
    coverage: np.ndarray  # h x w bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.coverage = np.asarray(self.coverage, dtype=bool)
        if self.values.shape != self.coverage.shape:
            raise MismatchedSize("visibility values and coverage differ in shape")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class DominanceIndex:
    masks: list  # one h x w bool grid per view
    handicapped: bool

    def __len__(self):
        return len(self.masks)

    def __getitem__(self, i):
        return self.masks[i]

    def labels(self) -> np.ndarray:
        """View index per pixel, -1 where no view covers it."""
        out = np.full(self.masks[0].shape, -1, dtype=np.int64)
        for i, m in enumerate(self.masks):
            out[m] = i
        return out


def vertex_visibility(mesh: Mesh, cam: Camera) -> np.ndarray:
    """Per-vertex score -<[x', y', 1] / ||.||, n_cam>."""
    proj = project(mesh, cam)
    view = np.concatenate([proj.normalized_coords, np.ones((mesh.n_vertices, 1))], axis=1)
    view /= np.linalg.norm(view, axis=1, keepdims=True)
    normals = vertex_normals(mesh) @ cam.rotation.T
    return np.clip(-np.einsum("ij,ij->i", view, normals), -1.0, 1.0)


def visibility_map(mesh: Mesh, cam: Camera, uv_size, backend=None) -> VisibilityMap:
    scores = vertex_visibility(mesh, cam)
    w, h = int(uv_size[0]), int(uv_size[1])
    img = rasterize(
        mesh.tex_coords * np.array([w, h], dtype=np.float64), None, mesh.triangles,
        VertexAttributes(scores), (w, h), backend=backend,
    )
    return VisibilityMap(np.clip(img.data[:, :, 0], -1.0, 1.0), img.coverage)


def _check_same_shape(maps):
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise MismatchedSize(f"visibility maps differ in size: {shape} vs {m.shape}")


def dominance_index(vis, handicap_input_view: bool = False) -> DominanceIndex:
    """Assign each covered UV pixel to the view that sees it best.

    Index 0 is the input view; with ``handicap_input_view`` its score is
    doubled before comparison. Ties go to the lowest index.
    """
    vis = list(vis)
    if not vis:
        raise ValueError("need at least one visibility map")
    _check_same_shape(vis)
    stack = np.stack([v.values for v in vis])
    if handicap_input_view:
        stack[0] = 2.0 * stack[0]
    covered = np.stack([v.coverage for v in vis])
    stack = np.where(covered, stack, -np.inf)
    winner = np.argmax(stack, axis=0)
    any_cov = covered.any(axis=0)
    masks = [(winner == i) & any_cov for i in range(len(vis))]
    return DominanceIndex(masks, bool(handicap_input_view))


def uv_optimization_mask(v0: VisibilityMap, vi: VisibilityMap, prior_dominance, t1: float = DEFAULT_T1) -> np.ndarray:
    """((V0 > t1) & (2 V0 > Vi)) | any(prior dominance masks), on V0's coverage."""
    _check_same_shape([v0, vi])
    mask = v0.coverage & (v0.values > t1) & (2.0 * v0.values > vi.values)
    for prior in prior_dominance:
        prior = np.asarray(prior, dtype=bool)
        if prior.shape != v0.shape:
            raise MismatchedSize(f"prior mask {prior.shape} vs visibility {v0.shape}")
        mask = mask | prior
    return mask


def build_optimization_mask(v0, vi, prior_dominance, t1, mesh: Mesh, cam_i: Camera, img_size, coords_2d=None, backend=None):
    """UV mask and its rendering into view ``i``, binarized at 0.5.

    ``coords_2d`` overrides the projected positions (e.g. after alignment).
    """
    uv_mask = uv_optimization_mask(v0, vi, prior_dominance, t1)
    proj = project(mesh, cam_i, img_size)
    coords = proj.coords_2d if coords_2d is None else coords_2d
    tex = RasterImage(uv_mask.astype(np.float64), np.ones(uv_mask.shape, dtype=bool))
    rendered = render_projected(mesh, coords, proj.depths, tex, img_size, backend)
    binary = (rendered.data >= 0.5) & rendered.coverage[:, :, None]
    return uv_mask, RasterImage(binary.astype(np.float64), rendered.coverage)
