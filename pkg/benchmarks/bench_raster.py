"""Compare the numba and numpy rasterizer kernels on the head fixture.

    python benchmarks/bench_raster.py [--repeat N] [--sizes 128 256 512]

Both backends run in this process; TEXCOMPLETE_BACKEND only picks the
default. Outputs are checked for equality before timing is reported.
"""
import argparse
import time

import numpy as np

from texcomplete import _accel
from texcomplete.fixtures import head_mesh, head_texture, input_camera
from texcomplete.geometry import project
from texcomplete.raster import RasterImage, rasterize_fragments, render_view, unwrap_to_uv


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[128, 256, 512])
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not available (or TEXCOMPLETE_BACKEND=numpy); nothing to compare")

    mesh = head_mesh()
    tex = RasterImage.full(head_texture())
    cam = input_camera()
    print(f"mesh: {mesh.n_triangles} triangles, best of {args.repeat}")
    print(f"{'task':<12}{'size':>6}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for size in args.sizes:
        proj = project(mesh, cam, (size, size))
        tasks = {
            "fragments": lambda b: rasterize_fragments(proj.coords_2d, proj.depths, mesh.triangles, (size, size), backend=b),
            "render": lambda b: render_view(mesh, cam, tex, (size, size), b),
            "unwrap": lambda b: unwrap_to_uv(mesh, proj, render_view(mesh, cam, tex, (size, size), b), (size, size), b),
        }
        for name, task in tasks.items():
            a, b = task("numpy"), task("numba")  # also warms up the jit
            if name == "fragments":
                assert np.array_equal(a.tri_id, b.tri_id)
            else:
                np.testing.assert_allclose(a.data, b.data, atol=1e-12)
            t_np = best_of(lambda: task("numpy"), args.repeat)
            t_nb = best_of(lambda: task("numba"), args.repeat)
            print(f"{name:<12}{size:>6}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
