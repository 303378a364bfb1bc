"""File formats: OBJ subset, PNG, camera JSON and the TOML run config."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import Image

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import IndexOutOfRange, MissingTexCoord, ObjSyntaxError, SchemaError, ValidationError
from .geometry import Camera, Mesh
from .losses import TERMS, LossWeights
from .optim import OptimOptions
from .pipeline import CompletionOptions, ViewPlan, default_view_plan

# --------------------------------------------------------------------------
# OBJ


def _resolve(tok: str, count: int, line: int) -> int:
    try:
        i = int(tok)
    except ValueError:
        raise ObjSyntaxError(line, f"bad index {tok!r}") from None
    if i == 0:
        raise IndexOutOfRange(line, "OBJ indices are 1-based; got 0")
    idx = i - 1 if i > 0 else count + i
    if not 0 <= idx < count:
        raise IndexOutOfRange(line, f"index {i} out of range (have {count})")
    return idx


def parse_obj(text: str, landmarks=None) -> Mesh:
    """Parse ``v``, ``vt`` and ``f v/vt ...`` records.

    Polygons are fan-triangulated. Normals and every other record type are
    ignored. A vertex referenced with several texture coordinates is split so
    that each mesh vertex carries exactly one UV; ``landmarks`` (0-based
    indices into the OBJ's ``v`` list) follow the first copy.
    """
    verts, tcs, corners = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "v":
            if len(rest) < 3:
                raise ObjSyntaxError(lineno, "vertex needs 3 coordinates")
            try:
                verts.append([float(x) for x in rest[:3]])
            except ValueError:
                raise ObjSyntaxError(lineno, "non-numeric vertex coordinate") from None
        elif head == "vt":
            if len(rest) < 2:
                raise ObjSyntaxError(lineno, "texture coordinate needs 2 values")
            try:
                tcs.append([float(x) for x in rest[:2]])
            except ValueError:
                raise ObjSyntaxError(lineno, "non-numeric texture coordinate") from None
        elif head == "f":
            if len(rest) < 3:
                raise ObjSyntaxError(lineno, "face needs at least 3 corners")
            poly = []
            for tok in rest:
                parts = tok.split("/")
                if len(parts) < 2 or not parts[1]:
                    raise MissingTexCoord(lineno, f"face corner {tok!r} has no texture index")
                poly.append((_resolve(parts[0], len(verts), lineno), _resolve(parts[1], len(tcs), lineno)))
            for k in range(1, len(poly) - 1):
                corners.append((poly[0], poly[k], poly[k + 1], lineno))
    n = len(verts)
    first_tc = [-1] * n
    split = {}
    extra_v, extra_tc = [], []

    def vid(v, t):
        if first_tc[v] in (-1, t):
            first_tc[v] = t
            return v
        key = (v, t)
        if key not in split:
            split[key] = n + len(extra_v)
            extra_v.append(verts[v])
            extra_tc.append(t)
        return split[key]

    tris = []
    for a, b, c, lineno in corners:
        tri = (vid(*a), vid(*b), vid(*c))
        if len(set(tri)) < 3:
            raise ObjSyntaxError(lineno, "degenerate face with repeated vertex")
        tris.append(tri)
    uv = [tcs[t] if t >= 0 else [0.0, 0.0] for t in first_tc] + [tcs[t] for t in extra_tc]
    lm = np.zeros(0, dtype=np.int64) if landmarks is None else np.asarray(landmarks, dtype=np.int64)
    return Mesh(
        np.asarray(verts + extra_v, dtype=np.float64).reshape(-1, 3),
        np.asarray(tris, dtype=np.int64).reshape(-1, 3),
        np.asarray(uv, dtype=np.float64).reshape(-1, 2),
        lm,
    )


def serialize_obj(mesh: Mesh) -> str:
    """One ``vt`` per vertex, faces as ``f i/i j/j k/k``; floats round-trip."""
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"vt {u!r} {v!r}" for u, v in mesh.tex_coords.tolist()]
    lines += ["f " + " ".join(f"{i + 1}/{i + 1}" for i in tri) for tri in mesh.triangles.tolist()]
    return "\n".join(lines) + "\n"


def load_landmarks(path) -> np.ndarray:
    """Whitespace-separated 0-based vertex indices."""
    text = Path(path).read_text()
    try:
        return np.array([int(t) for t in text.split()], dtype=np.int64)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def landmark_sidecar(mesh_path) -> Path:
    p = Path(mesh_path)
    return p.with_name(p.stem + ".landmarks.txt")


def load_mesh(path, landmarks_path=None) -> Mesh:
    lm_path = Path(landmarks_path) if landmarks_path else landmark_sidecar(path)
    lm = load_landmarks(lm_path) if lm_path.exists() else None
    return parse_obj(Path(path).read_text(encoding="utf-8"), lm)


# --------------------------------------------------------------------------
# PNG


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def to_uint8(data) -> np.ndarray:
    """[0, 1] floats to 8 bit, rounding half to even."""
    return np.round(np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, data):
    """RGB for 3-channel data, 8-bit grayscale for single-channel."""
    arr = to_uint8(data)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr, mode="L" if arr.ndim == 2 else "RGB").save(path)


def write_loss_trace(path, result):
    """CSV of iteration, total and the four unweighted terms."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("iteration", "total") + TERMS)
        for it, (total, terms) in enumerate(zip(result.trace, result.term_trace)):
            w.writerow([it, repr(float(total))] + [repr(float(terms[k])) for k in TERMS])


# --------------------------------------------------------------------------
# cameras


def _camera(value, path) -> Camera:
    if not isinstance(value, list):
        raise SchemaError(path, "camera must be an array of 7 numbers")
    if len(value) != 7:
        raise SchemaError(path, f"camera must have 7 numbers, got {len(value)}")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in value):
        raise SchemaError(path, "camera entries must be finite numbers")
    return Camera.from_array(value)


def parse_cameras(src, generate_views=None) -> ViewPlan:
    """Build a plan from ``{"input": [...7], "views": [[...7], ...], "frontal": [...7]}``.

    ``generate_views`` = (yaw_deg, pitch_deg) fills the default five novel
    views when ``views`` is empty.
    """
    if isinstance(src, (str, bytes)):
        try:
            data = json.loads(src)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"invalid JSON: {exc.msg} (line {exc.lineno})") from None
    else:
        data = src
    if not isinstance(data, dict):
        raise SchemaError("$", "top level must be an object")
    for key in ("input", "views", "frontal"):
        if key not in data:
            raise SchemaError(f"$.{key}", "missing")
    if not isinstance(data["views"], list):
        raise SchemaError("$.views", "must be an array")
    cam0 = _camera(data["input"], "$.input")
    views = [_camera(v, f"$.views[{i}]") for i, v in enumerate(data["views"])]
    frontal = _camera(data["frontal"], "$.frontal")
    if not views and generate_views is not None:
        return default_view_plan(cam0, frontal, *generate_views)
    return ViewPlan([cam0] + views, frontal)


# --------------------------------------------------------------------------
# run config


@dataclass
class RunConfig:
    uv_size: int = 1024
    image_size: int = 64
    t1: float = 0.3
    feather_px: float | None = None
    lambda_p: float = LossWeights.lambda_p
    lambda_id: float = LossWeights.lambda_id
    lambda_per: float = LossWeights.lambda_per
    lambda_lan: float = LossWeights.lambda_lan
    lr: float = OptimOptions.lr
    beta1: float = OptimOptions.beta1
    beta2: float = OptimOptions.beta2
    eps: float = OptimOptions.eps
    max_iters: int = OptimOptions.max_iters
    rel_tol: float = OptimOptions.rel_tol
    window: int = OptimOptions.window
    generate_views: bool = False
    yaw_deg: float = 45.0
    pitch_deg: float = -30.0
    plugin_kind: str = "toy"
    latent_dim: int = 64
    amplitude: float = 0.08
    encoder_samples: int | None = None
    landmark_prior: str = "template"
    seed: int = 0
    align: bool = True
    reproject_input: bool = False
    output_dir: str | None = None
    extra: dict = field(default_factory=dict, repr=False)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_p, self.lambda_id, self.lambda_per, self.lambda_lan)

    def optim_options(self) -> OptimOptions:
        return OptimOptions(self.lr, self.beta1, self.beta2, self.eps, self.max_iters, self.rel_tol, self.window)

    def completion_options(self, backend=None) -> CompletionOptions:
        return CompletionOptions(
            uv_size=(self.uv_size, self.uv_size),
            t1=self.t1,
            feather_px=self.feather_px,
            optim=self.optim_options(),
            align=self.align,
            reproject_input=self.reproject_input,
            backend=backend,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d


# section -> key -> (field name, type)
_SCHEMA = {
    "sizes": {"uv_size": ("uv_size", int), "image_size": ("image_size", int)},
    "visibility": {"t1": ("t1", float)},
    "blend": {"feather_px": ("feather_px", float)},
    "loss": {k: (k, float) for k in ("lambda_p", "lambda_id", "lambda_per", "lambda_lan")},
    "optim": {
        "lr": ("lr", float), "beta1": ("beta1", float), "beta2": ("beta2", float), "eps": ("eps", float),
        "max_iters": ("max_iters", int), "rel_tol": ("rel_tol", float), "window": ("window", int),
    },
    "views": {"generate": ("generate_views", bool), "yaw_deg": ("yaw_deg", float), "pitch_deg": ("pitch_deg", float)},
    "plugins": {
        "kind": ("plugin_kind", str), "latent_dim": ("latent_dim", int), "amplitude": ("amplitude", float),
        "encoder_samples": ("encoder_samples", int), "landmark_prior": ("landmark_prior", str), "seed": ("seed", int),
    },
    "pipeline": {"align": ("align", bool), "reproject_input": ("reproject_input", bool)},
    "output": {"dir": ("output_dir", str)},
}


def _typed(value, typ, path):
    if typ is bool:
        if not isinstance(value, bool):
            raise SchemaError(path, f"expected boolean, got {type(value).__name__}")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(path, f"expected integer, got {type(value).__name__}")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(path, f"expected number, got {type(value).__name__}")
        if not math.isfinite(value):
            raise SchemaError(path, "must be finite")
        return float(value)
    if not isinstance(value, str):
        raise SchemaError(path, f"expected string, got {type(value).__name__}")
    return value


def _field_path():
    return {name: f"{section}.{key}" for section, keys in _SCHEMA.items() for key, (name, _) in keys.items()}


def validate_config(cfg: RunConfig) -> RunConfig:
    p = _field_path()

    def need(cond, name, msg):
        if not cond:
            raise SchemaError(p[name], msg)

    need(cfg.uv_size >= 16, "uv_size", "must be >= 16")
    need(cfg.image_size >= 16, "image_size", "must be >= 16")
    need(cfg.image_size % 4 == 0, "image_size", "must be a multiple of 4")
    need(-1.0 < cfg.t1 < 1.0, "t1", "must lie in (-1, 1)")
    need(cfg.feather_px is None or cfg.feather_px >= 0, "feather_px", "must be >= 0")
    for name in ("lambda_p", "lambda_id", "lambda_per", "lambda_lan"):
        need(getattr(cfg, name) >= 0, name, "must be >= 0")
    need(any(getattr(cfg, n) > 0 for n in ("lambda_p", "lambda_id", "lambda_per", "lambda_lan")), "lambda_p",
         "at least one loss weight must be positive")
    need(cfg.lr > 0, "lr", "must be > 0")
    need(0 <= cfg.beta1 < 1, "beta1", "must lie in [0, 1)")
    need(0 <= cfg.beta2 < 1, "beta2", "must lie in [0, 1)")
    need(cfg.eps > 0, "eps", "must be > 0")
    need(cfg.max_iters >= 0, "max_iters", "must be >= 0")
    need(cfg.rel_tol >= 0, "rel_tol", "must be >= 0")
    need(cfg.window >= 1, "window", "must be >= 1")
    need(cfg.plugin_kind == "toy", "plugin_kind", "only 'toy' plugins are available")
    need(cfg.latent_dim >= 1, "latent_dim", "must be >= 1")
    need(cfg.amplitude > 0, "amplitude", "must be > 0")
    need(cfg.encoder_samples is None or cfg.encoder_samples > cfg.latent_dim, "encoder_samples",
         "must exceed latent_dim")
    need(cfg.landmark_prior in ("template", "random"), "landmark_prior", "must be 'template' or 'random'")
    need(cfg.seed >= 0, "seed", "must be >= 0")
    return cfg


def parse_config(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError("$", f"invalid TOML: {exc}") from None
    values = {}
    for section, body in raw.items():
        if section not in _SCHEMA:
            raise SchemaError(section, "unknown section")
        if not isinstance(body, dict):
            raise SchemaError(section, "must be a table")
        for key, value in body.items():
            path = f"{section}.{key}"
            if key not in _SCHEMA[section]:
                raise SchemaError(path, "unknown key")
            name, typ = _SCHEMA[section][key]
            values[name] = _typed(value, typ, path)
    known = {f.name for f in fields(RunConfig)}
    assert set(values) <= known
    return validate_config(RunConfig(**values))


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
