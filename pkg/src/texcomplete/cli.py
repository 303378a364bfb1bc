"""Command-line entry point.

    texcomplete --image in.png --mesh head.obj --cameras cams.json \\
                --config run.toml --out RUN_DIR [--frontalize] [--seed N]

Exit codes: 0 success, 1 invalid input (flags, files, config), 2 runtime
failure.
"""
from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import io
from .errors import TexCompleteError, ValidationError
from .genmodel import make_toy_plugins
from .pipeline import frontalize, load_landmark_template, run_completion
from .raster import RasterImage

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="texcomplete", description="Complete a UV face texture from one posed image.")
    p.add_argument("--image", required=True, type=Path, help="input photograph (PNG)")
    p.add_argument("--mesh", required=True, type=Path, help="fitted mesh (OBJ with vt)")
    p.add_argument("--cameras", required=True, type=Path, help="camera plan (JSON)")
    p.add_argument("--config", required=True, type=Path, help="run configuration (TOML)")
    p.add_argument("--out", required=True, type=Path, help="output run directory")
    p.add_argument("--landmarks", type=Path, default=None, help="landmark index file (default: <mesh stem>.landmarks.txt)")
    p.add_argument("--frontalize", action="store_true", help="also write the frontalized face")
    p.add_argument("--seed", type=int, default=None, help="plugin seed (overrides the config)")
    p.add_argument("--dump-intermediate", action="store_true", help="also write visibility and dominance maps")
    p.add_argument("--force", action="store_true", help="replace an existing output directory")
    p.add_argument("--timings", action="store_true", help="record wall-clock timings in the manifest")
    return p


def _gray(mask) -> np.ndarray:
    return np.asarray(mask, dtype=np.float64)[:, :, None] if np.ndim(mask) == 2 else np.asarray(mask, dtype=np.float64)


def _visibility_png(vmap) -> np.ndarray:
    # score in [-1, 1] -> [0, 1]; uncovered is black
    return _gray(np.where(vmap.coverage, 0.5 * (vmap.values + 1.0), 0.0))


def _dominance_png(dom) -> np.ndarray:
    labels = dom.labels()
    n = max(len(dom), 1)
    return _gray(np.where(labels >= 0, (labels + 1) / n, 0.0))


def _load_inputs(args):
    if args.seed is not None and args.seed < 0:
        raise ValidationError("--seed must be non-negative")
    for flag in ("image", "mesh", "cameras", "config"):
        if not getattr(args, flag).is_file():
            raise ValidationError(f"--{flag}: no such file: {getattr(args, flag)}")
    cfg = io.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    mesh = io.load_mesh(args.mesh, args.landmarks)
    gen_views = (cfg.yaw_deg, cfg.pitch_deg) if cfg.generate_views else None
    plan = io.parse_cameras(args.cameras.read_text(encoding="utf-8"), gen_views)
    try:
        image = io.load_png(args.image)
    except OSError as exc:
        raise ValidationError(f"--image: {exc}") from None
    return cfg, mesh, plan, image


def _plugins(cfg):
    size = (cfg.image_size, cfg.image_size)
    centers = load_landmark_template() * cfg.image_size if cfg.landmark_prior == "template" else None
    return make_toy_plugins(cfg.seed, cfg.latent_dim, size, centers, cfg.encoder_samples, cfg.amplitude)


def _write_run(tmp: Path, cfg, result, front, dump, timings):
    io.save_png(tmp / "completed_uv.png", result.completed_uv.data)
    io.save_png(tmp / "input_uv.png", result.input_uv.data)
    views = []
    for art in result.per_view:
        d = tmp / f"view_{art.index:02d}"
        d.mkdir()
        io.save_png(d / "rendered.png", art.rendered.data)
        io.save_png(d / "mask.png", art.mask.data)
        io.save_png(d / "generated.png", art.generated)
        io.save_png(d / "partial_uv.png", art.partial_uv.data)
        io.write_loss_trace(d / "loss_trace.csv", art.projection)
        if dump:
            io.save_png(d / "uv_mask.png", _gray(art.uv_mask))
            io.save_png(d / "visibility.png", _visibility_png(result.visibility[art.index]))
        res = art.projection
        last = res.term_trace[-1] if res.term_trace else {}
        views.append({
            "index": art.index,
            "iterations": res.iterations_run,
            "final_total": float(res.trace[-1]) if res.trace else None,
            "best_total": None if not res.trace else float(res.best_total),
            "per_term": {k: float(v) for k, v in last.items()},
            "converged": bool(res.converged),
        })
    if dump:
        io.save_png(tmp / "dominance.png", _dominance_png(result.dominance))
        io.save_png(tmp / "dominance_plain.png", _dominance_png(result.dominance_plain))
    manifest = {"config": cfg.to_dict(), "views": views, "timings_ms": timings}
    if front is not None:
        image, res, _ = front
        io.save_png(tmp / "frontal.png", image)
        manifest["frontal"] = {
            "iterations": res.iterations_run,
            "final_total": float(res.trace[-1]) if res.trace else None,
            "converged": bool(res.converged),
        }
    return manifest


def run(args) -> int:
    out = args.out
    if out.exists() and not args.force:
        raise ValidationError(f"--out: {out} exists (use --force to replace it)")
    cfg, mesh, plan, image = _load_inputs(args)
    plugins = _plugins(cfg)
    opts = cfg.completion_options()
    weights = cfg.loss_weights()

    t0 = time.perf_counter()
    result = run_completion(RasterImage.full(image), mesh, plan, plugins, weights, opts)
    t1 = time.perf_counter()
    front = None
    if args.frontalize:
        front = frontalize(result.completed_uv, mesh, plan.frontal_camera, plugins, weights, opts,
                           frame_size=image.shape[1::-1])
    t2 = time.perf_counter()

    for art in result.per_view:
        res = art.projection
        final = res.trace[-1] if res.trace else float("nan")
        print(f"view {art.index}: iterations={res.iterations_run} final_total={final:.6g}")

    timings = None
    if args.timings:
        timings = {
            "views": [round(a.seconds * 1000.0, 3) for a in result.per_view],
            "completion": round((t1 - t0) * 1000.0, 3),
            "frontalize": round((t2 - t1) * 1000.0, 3) if args.frontalize else None,
        }

    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        manifest = _write_run(tmp, cfg, result, front, args.dump_intermediate, timings)
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    try:
        return run(args)
    except ValidationError as exc:
        print(f"texcomplete: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TexCompleteError, OSError, FloatingPointError) as exc:
        print(f"texcomplete: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
