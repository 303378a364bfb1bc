"""Synthetic head: a lat-long ellipsoid with a nose bump, a procedural
ground-truth texture, 68 landmark vertices and a six-camera plan.

Run ``python -m texcomplete.fixtures OUTDIR`` to write the files the CLI
expects (mesh, landmark sidecar, cameras, config, input image).
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .geometry import Camera, Mesh
from .raster import RasterImage, render_view

PHI_RANGE = (0.15 * np.pi, 0.85 * np.pi)
RADII = (0.8, 1.0, 0.9)
DISTANCE = 4.0
IMAGE_SIZE = 128
FOCAL = 0.42 * IMAGE_SIZE * DISTANCE


def _surface(lam, phi):
    ax, ay, az = RADII
    p = np.stack([ax * np.sin(phi) * np.sin(lam), -ay * np.cos(phi), -az * np.sin(phi) * np.cos(lam)], axis=-1)
    bump = 0.22 * np.exp(-(lam / 0.22) ** 2 - ((phi - 0.55 * np.pi) / 0.12) ** 2)
    radial = p / np.linalg.norm(p, axis=-1, keepdims=True)
    return p + bump[..., None] * radial


def _landmark_angles():
    """(lambda, phi) of the 68 landmarks in the usual 68-point ordering."""
    pts = []
    t = np.linspace(0.0, 1.0, 17)
    pts += list(zip(-1.15 + 2.3 * t, 0.47 * np.pi + 0.25 * np.pi * np.sin(np.pi * t)))  # jaw
    for side in (-1, 1):  # brows
        lam = np.linspace(-0.75, -0.2, 5) if side < 0 else np.linspace(0.2, 0.75, 5)
        pts += [(lm, 0.37 * np.pi - 0.02 * np.pi * np.cos((lm - side * 0.47) * 4)) for lm in lam]
    pts += [(0.0, phi) for phi in np.linspace(0.42 * np.pi, 0.55 * np.pi, 4)]  # nose bridge
    pts += [(lm, 0.59 * np.pi) for lm in np.linspace(-0.2, 0.2, 5)]  # nostrils
    ang = np.linspace(0.0, 2.0 * np.pi, 6, endpoint=False)
    for cx in (-0.45, 0.45):  # eyes
        pts += [(cx - 0.15 * np.cos(a), 0.44 * np.pi - 0.03 * np.pi * np.sin(a)) for a in ang]
    ang = np.linspace(0.0, 2.0 * np.pi, 12, endpoint=False)
    pts += [(-0.35 * np.cos(a), 0.68 * np.pi - 0.045 * np.pi * np.sin(a)) for a in ang]  # outer lips
    ang = np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)
    pts += [(-0.2 * np.cos(a), 0.68 * np.pi - 0.02 * np.pi * np.sin(a)) for a in ang]  # inner lips
    return np.array(pts)


def head_mesh(n_lat: int = 30, n_lon: int = 64) -> Mesh:
    """Open ellipsoid head, seam at the back, face looking toward -z."""
    phi = np.linspace(*PHI_RANGE, n_lat + 1)
    lam = np.linspace(-np.pi, np.pi, n_lon + 1)
    LAM, PHI = np.meshgrid(lam, phi)
    verts = _surface(LAM, PHI).reshape(-1, 3)
    uv = np.stack([(LAM / (2 * np.pi) + 0.5), (PHI - PHI_RANGE[0]) / (PHI_RANGE[1] - PHI_RANGE[0])], axis=-1)
    uv = np.clip(uv.reshape(-1, 2), 0.0, 1.0)
    idx = np.arange((n_lat + 1) * (n_lon + 1)).reshape(n_lat + 1, n_lon + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    tris = np.concatenate([np.stack([a, c, b], 1), np.stack([b, c, d], 1)])
    # make the winding give outward normals
    v0 = verts[tris[:, 0]]
    fn = np.cross(verts[tris[:, 1]] - v0, verts[tris[:, 2]] - v0)
    centroid = verts[tris].mean(axis=1)
    if np.sum(np.einsum("ij,ij->i", fn, centroid)) < 0:
        tris = tris[:, [0, 2, 1]]
    angles = _landmark_angles()
    grid = np.stack([LAM.ravel(), PHI.ravel()], axis=1)
    lm = []
    for p in angles:
        d2 = ((grid - p) ** 2).sum(1)
        d2[lm] = np.inf
        lm.append(int(np.argmin(d2)))
    return Mesh(verts, tris, uv, lm)


def head_texture(size: int = 256) -> np.ndarray:
    """Smooth procedural RGB texture on the head's UV layout."""
    v, u = np.meshgrid((np.arange(size) + 0.5) / size, (np.arange(size) + 0.5) / size, indexing="ij")
    lam = (u - 0.5) * 2 * np.pi
    phi = PHI_RANGE[0] + v * (PHI_RANGE[1] - PHI_RANGE[0])
    skin = np.array([0.78, 0.58, 0.46])
    tex = skin + 0.06 * np.stack(
        [np.sin(3 * lam + 1.0) * np.cos(2 * phi), np.cos(2 * lam) * np.sin(3 * phi + 0.5), np.sin(lam + phi)], -1
    )
    hair = np.clip((np.abs(lam) - 1.6) / 0.4, 0, 1) + np.clip((0.3 * np.pi - phi) / (0.1 * np.pi), 0, 1)
    hair = np.clip(hair, 0, 1)[..., None]
    tex = (1 - hair) * tex + hair * np.array([0.25, 0.17, 0.12])

    def blob(cl, cp, sl, sp):
        return np.exp(-(((lam - cl) / sl) ** 2) - ((phi - cp) / sp) ** 2)[..., None]

    for cl in (-0.45, 0.45):
        tex = tex * (1 - 0.6 * blob(cl, 0.44 * np.pi, 0.14, 0.04 * np.pi)) + 0.6 * blob(cl, 0.44 * np.pi, 0.14, 0.04 * np.pi) * np.array([0.2, 0.25, 0.35])
        tex = tex * (1 - 0.5 * blob(cl, 0.37 * np.pi, 0.3, 0.02 * np.pi)) + 0.5 * blob(cl, 0.37 * np.pi, 0.3, 0.02 * np.pi) * np.array([0.3, 0.2, 0.15])
    m = blob(0.0, 0.68 * np.pi, 0.3, 0.045 * np.pi)
    tex = tex * (1 - 0.7 * m) + 0.7 * m * np.array([0.75, 0.3, 0.32])
    cheek = blob(0.0, 0.6 * np.pi, 1.2, 0.15 * np.pi) * 0.06
    tex = tex + cheek * np.array([0.3, -0.2, -0.2])
    return np.clip(tex, 0.0, 1.0)


def frontal_camera() -> Camera:
    return Camera(FOCAL, 0.0, 0.0, 0.0, 0.0, 0.0, DISTANCE)


def input_camera() -> Camera:
    return Camera(FOCAL, 0.0, np.deg2rad(30.0), 0.0, 0.0, 0.0, DISTANCE)


def view_cameras(yaw_deg: float = 45.0, pitch_deg: float = -30.0) -> list:
    """Bottom, bottom-left, bottom-right, left, right around the frontal pose."""
    y, p = np.deg2rad(yaw_deg), np.deg2rad(pitch_deg)
    poses = [(p, 0.0), (p, -y), (p, y), (0.0, -y), (0.0, y)]
    return [Camera(FOCAL, rx, ry, 0.0, 0.0, 0.0, DISTANCE) for rx, ry in poses]


def input_image(mesh: Mesh | None = None, texture=None, size: int = IMAGE_SIZE) -> RasterImage:
    mesh = mesh if mesh is not None else head_mesh()
    texture = head_texture() if texture is None else texture
    return render_view(mesh, input_camera(), RasterImage.full(texture), (size, size))


def cameras_json() -> dict:
    return {
        "input": input_camera().to_array().tolist(),
        "views": [c.to_array().tolist() for c in view_cameras()],
        "frontal": frontal_camera().to_array().tolist(),
    }


FIXTURE_CONFIG = """\
[sizes]
uv_size = 128
image_size = 64

[visibility]
t1 = 0.3

[blend]
feather_px = 2.0

[plugins]
kind = "toy"
latent_dim = 64
landmark_prior = "template"

[optim]
max_iters = 150
"""


def write_fixture(outdir) -> dict:
    """Write head.obj, head.landmarks.txt, cameras.json, config.toml, input.png."""
    from .io import save_png, serialize_obj

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = head_mesh()
    paths = {
        "mesh": out / "head.obj",
        "landmarks": out / "head.landmarks.txt",
        "cameras": out / "cameras.json",
        "config": out / "config.toml",
        "image": out / "input.png",
        "texture": out / "ground_truth_uv.png",
    }
    paths["mesh"].write_text(serialize_obj(mesh))
    paths["landmarks"].write_text("\n".join(str(int(i)) for i in mesh.landmark_indices) + "\n")
    paths["cameras"].write_text(json.dumps(cameras_json(), indent=2))
    paths["config"].write_text(FIXTURE_CONFIG)
    save_png(paths["image"], input_image(mesh).data)
    save_png(paths["texture"], head_texture())
    return paths


if __name__ == "__main__":
    if len(sys.argv) != 2:
        print("usage: python -m texcomplete.fixtures OUTDIR", file=sys.stderr)
        sys.exit(1)
    for name, p in write_fixture(sys.argv[1]).items():
        print(f"{name}: {p}")
