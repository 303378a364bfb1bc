"""Mesh and camera types, pinhole projection, vertex normals."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateNormalWarning, MeshError, NonPositiveDepth


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh with one UV coordinate per vertex.

    ``landmark_indices`` may be empty for meshes that are never used with the
    landmark loss.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tex_coords: np.ndarray
    landmark_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        uv = np.ascontiguousarray(self.tex_coords, dtype=np.float64)
        lm = np.ascontiguousarray(self.landmark_indices, dtype=np.int64).reshape(-1)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be n x 3, got {v.shape}")
        t = t.reshape(-1, 3) if t.size == 0 else t
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must be m x 3, got {t.shape}")
        if uv.shape != (len(v), 2):
            raise MeshError(f"tex_coords must be {len(v)} x 2, got {uv.shape}")
        n = len(v)
        if t.size and (t.min() < 0 or t.max() >= n):
            raise MeshError("triangle index out of range")
        if lm.size and (lm.min() < 0 or lm.max() >= n):
            raise MeshError("landmark index out of range")
        if np.any(uv < 0.0) or np.any(uv > 1.0):
            raise MeshError("tex_coords must lie in [0, 1]")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertices must be finite")
        if t.size and np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise MeshError("degenerate triangle with repeated vertex index")
        for name, arr in (("vertices", v), ("triangles", t), ("tex_coords", uv), ("landmark_indices", lm)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


@dataclass(frozen=True)
class Camera:
    f: float
    r_x: float = 0.0
    r_y: float = 0.0
    r_z: float = 0.0
    t_x: float = 0.0
    t_y: float = 0.0
    t_z: float = 0.0

    @classmethod
    def from_array(cls, arr) -> "Camera":
        vals = [float(a) for a in arr]
        if len(vals) != 7:
            raise ValueError(f"camera needs 7 parameters, got {len(vals)}")
        return cls(*vals)

    def to_array(self) -> np.ndarray:
        return np.array([self.f, self.r_x, self.r_y, self.r_z, self.t_x, self.t_y, self.t_z])

    @property
    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.r_x, self.r_y, self.r_z)

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.t_x, self.t_y, self.t_z])


@dataclass(frozen=True)
class ProjectedMesh:
    coords_2d: np.ndarray
    depths: np.ndarray
    cam_space: np.ndarray
    focal: float = 1.0
    principal_point: tuple = (0.0, 0.0)

    @property
    def normalized_coords(self) -> np.ndarray:
        """Image coordinates divided through by depth, before focal scaling."""
        return self.cam_space[:, :2] / self.depths[:, None]


def rotation_matrix(r_x: float, r_y: float, r_z: float) -> np.ndarray:
    """R = Rz @ Ry @ Rx (radians)."""
    cx, sx = np.cos(r_x), np.sin(r_x)
    cy, sy = np.cos(r_y), np.sin(r_y)
    cz, sz = np.cos(r_z), np.sin(r_z)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def project(mesh: Mesh, cam: Camera, image_size=None, principal_point=None) -> ProjectedMesh:
    """Pinhole projection of every vertex.

    The camera looks down +z; x grows to the right and y grows downward in the
    image. The principal point is the image centre when ``image_size`` (W, H)
    is given, ``principal_point`` if passed explicitly, else the origin.
    """
    if principal_point is None:
        principal_point = (0.0, 0.0) if image_size is None else (image_size[0] / 2.0, image_size[1] / 2.0)
    cam_space = mesh.vertices @ cam.rotation.T + cam.translation
    z = cam_space[:, 2]
    bad = np.flatnonzero(~(z > 0.0))
    if bad.size:
        raise NonPositiveDepth(int(bad[0]), float(z[bad[0]]))
    coords = cam.f * cam_space[:, :2] / z[:, None] + np.asarray(principal_point, dtype=np.float64)
    return ProjectedMesh(coords, z.copy(), cam_space, float(cam.f), tuple(float(p) for p in principal_point))


def _canonical_rotation(triangles: np.ndarray) -> np.ndarray:
    # start each triangle at its smallest index (winding unchanged), so a
    # reversed triangle yields the exact negated cross product
    shift = np.argmin(triangles, axis=1)
    cols = (shift[:, None] + np.arange(3)) % 3
    return np.take_along_axis(triangles, cols, axis=1)


def face_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Unnormalized face normals; their length is twice the triangle area."""
    triangles = _canonical_rotation(np.asarray(triangles))
    v0 = vertices[triangles[:, 0]]
    return np.cross(vertices[triangles[:, 1]] - v0, vertices[triangles[:, 2]] - v0)


def vertex_normals(mesh: Mesh, vertices: np.ndarray | None = None, return_degenerate: bool = False):
    """Area-weighted unit vertex normals (CCW winding gives the outward side).

    Vertices with no incident area fall back to (0, 0, 1) and are reported via
    :class:`DegenerateNormalWarning` (or returned when ``return_degenerate``).
    ``vertices`` overrides the mesh positions, e.g. with camera-space ones.
    """
    verts = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
    acc = np.zeros_like(verts)
    if mesh.n_triangles:
        fn = face_normals(verts, mesh.triangles)
        # triangle-major order: each vertex sums its faces in the same order
        # whatever the winding
        np.add.at(acc, mesh.triangles.reshape(-1), np.repeat(fn, 3, axis=0))
    norm = np.linalg.norm(acc, axis=1)
    degenerate = norm < 1e-12
    out = np.empty_like(acc)
    ok = ~degenerate
    out[ok] = acc[ok] / norm[ok, None]
    out[degenerate] = (0.0, 0.0, 1.0)
    # isolated vertices are expected; only warn for ones that touch a triangle
    used = np.zeros(len(verts), dtype=bool)
    used[mesh.triangles.reshape(-1)] = True
    bad = np.flatnonzero(degenerate & used)
    if bad.size:
        warnings.warn(f"{bad.size} vertices have degenerate normals", DegenerateNormalWarning, stacklevel=2)
    if return_degenerate:
        return out, np.flatnonzero(degenerate)
    return out
