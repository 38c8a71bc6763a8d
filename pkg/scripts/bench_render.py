"""Time the tiled rasterizer and its backward pass on random scenes.

    python scripts/bench_render.py [--n 2000] [--size 256] [--repeats 3]
"""

import argparse
import time

import numpy as np

from igs.core import Camera, GaussianSet, quat_normalize
from igs.render import rasterize, rasterize_backward
from igs.render.projection import as_params


def scene(n, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianSet(
        rng.uniform([-1, -1, -0.5], [1, 1, 0.5], (n, 3)),
        quat_normalize(rng.normal(size=(n, 4))),
        rng.uniform(0.01, 0.06, (n, 3)),
        rng.uniform(0.1, 0.9, n),
        rng.normal(scale=0.4, size=(n, 4, 3)),
        1,
    )


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    gs = scene(args.n)
    cam = Camera.look_at([0.3, -0.2, -4.0], [0, 0, 0], [0, -1, 0], 1.2 * args.size, 1.2 * args.size, args.size, args.size)
    weights = np.random.default_rng(1).normal(size=(args.size, args.size, 3))
    fwd, bwd = [], []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        rasterize(gs, cam)
        fwd.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        rasterize_backward(as_params(gs), cam, weights)
        bwd.append(time.perf_counter() - t0)
    print(f"n={args.n} size={args.size}: forward {min(fwd) * 1e3:.1f} ms, backward {min(bwd) * 1e3:.1f} ms")
