#!/usr/bin/env python3
"""Benchmark the numba and numpy compositing backends on the same scenes.

Usage: python3 benchmarks/bench_rasterizer.py [--sizes 128,256,512] [--splats 20000]
"""

import argparse
import time

import numpy as np

from panosplat.cameras import PerspectiveCamera
from panosplat.cloud import SplatCloud, rgb_to_dc
from panosplat.render import render_with_gradients
from panosplat.render.kernels import get_backend


def make_scene(n, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return SplatCloud(
        positions=np.stack([rng.uniform(-3, 3, n), rng.uniform(-3, 3, n),
                            rng.uniform(2.0, 9.0, n)], axis=1),
        rotations=q,
        log_scales=rng.uniform(-3.2, -2.2, (n, 3)),
        logit_opacities=rng.uniform(-1, 2.5, n),
        dc=rgb_to_dc(rng.uniform(0.05, 0.95, (n, 3))),
    )


def time_backend(backend, cloud, cam, target, repeats):
    # warm up (JIT compilation for numba, caches for numpy)
    render_with_gradients(cloud, cam, target, backend=backend)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        render_with_gradients(cloud, cam, target, backend=backend)
        times.append(time.perf_counter() - t0)
    return min(times), float(np.mean(times))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="128,256,512")
    parser.add_argument("--splats", type=int, default=20000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    cloud = make_scene(args.splats)
    rng = np.random.default_rng(1)

    print(f"forward+backward, {args.splats} splats, best of {args.repeats}")
    print(f"{'size':>6} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for size in sizes:
        cam = PerspectiveCamera.from_fov(70, size, size)
        target = rng.uniform(0, 1, (size, size, 3))
        nb_best, _ = time_backend("numba", cloud, cam, target, args.repeats)
        np_best, _ = time_backend("numpy", cloud, cam, target, args.repeats)
        print(f"{size:>4}px {nb_best:>9.3f}s {np_best:>9.3f}s {np_best / nb_best:>7.1f}x")

    # sanity: both backends agree on the last scene
    cam = PerspectiveCamera.from_fov(70, sizes[-1], sizes[-1])
    target = rng.uniform(0, 1, (sizes[-1], sizes[-1], 3))
    loss_nb, _ = render_with_gradients(cloud, cam, target, backend="numba")
    loss_np, _ = render_with_gradients(cloud, cam, target, backend="numpy")
    print(f"backend agreement: |loss diff| = {abs(loss_nb - loss_np):.2e}")
    print(f"active default backend: {get_backend().NAME}")


if __name__ == "__main__":
    main()
