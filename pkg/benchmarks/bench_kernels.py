"""Compare the compiled and pure-numpy kernels.

    python benchmarks/bench_kernels.py [--size 256] [--repeat 5] [--threads N]

Times BVH ray casting (one ray per target pixel, the backward pixel warp's
workload) and z-buffer splatting (the forward pixel warp's), and checks that
both backends return identical results.
"""

import argparse
import math
import os
import time

import numpy as np

from tokenwarp import _backend
from tokenwarp.camera import CameraIntrinsics, pixel_centers
from tokenwarp.mesh import build_mesh, cast_rays
from tokenwarp.synthetic import gen_two_plane_scene, orbit_camera
from tokenwarp.warp import forward_warp_points


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256, help="image width and height")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()

    n = args.size
    K = CameraIntrinsics(n / 2, n / 2, n / 2, n / 2, n, n)
    scene = gen_two_plane_scene(K, 0.5, 3.0, (0.45 * n, 0.55 * n), orbit_camera(math.radians(20), 1.5))
    t0 = time.perf_counter()
    mesh = build_mesh(scene.depth, K)
    _ = mesh.bvh
    build = time.perf_counter() - t0

    t2s = scene.rel.inverse()
    rays = K.pixel_rays(pixel_centers(n, n))
    dirs = rays @ t2s.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origin = t2s.translation

    coords, valid, z = forward_warp_points(pixel_centers(n, n), scene.depth, scene.rel, K)
    col, row = np.floor(np.where(valid, coords[:, 0], -1)), np.floor(np.where(valid, coords[:, 1], -1))
    inside = valid & (col >= 0) & (col < n) & (row >= 0) & (row < n)
    target = np.where(inside, row * n + col, -1).astype(np.int64)
    zz = np.where(inside, z, np.inf)

    print(f"{n}x{n} image, {len(mesh.triangles)} triangles, {len(dirs)} rays, "
          f"BVH build {build * 1e3:.1f} ms, threads={args.threads}")
    print(f"{'kernel':<10} {'backend':<10} {'best ms':>10} {'speedup':>8}")
    results = {}
    for kernel in ("cast", "splat"):
        base = None
        for name in ["python"] + [b for b in _backend.available() if b != "python"]:
            if kernel == "cast":
                fn = lambda: cast_rays(mesh, origin, dirs, backend=name, nthreads=args.threads)  # noqa: E731
            else:
                k = _backend.get(name)
                fn = lambda: k.splat_nearest(target, zz, n * n)  # noqa: E731
            secs, out = best_of(fn, args.repeat)
            base = base or secs
            results[(kernel, name)] = out
            print(f"{kernel:<10} {name:<10} {secs * 1e3:>10.2f} {base / secs:>7.1f}x")
    if "compiled" in _backend.available():
        a, b = results[("cast", "python")], results[("cast", "compiled")]
        assert np.array_equal(a.triangle, b.triangle) and a.t.tobytes() == b.t.tobytes()
        assert np.array_equal(results[("splat", "python")], results[("splat", "compiled")])
        print("backends agree bit-for-bit")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
