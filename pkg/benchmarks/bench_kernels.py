"""Numba vs numpy timings for the two raster hot loops.

    python3 benchmarks/bench_kernels.py [--size 64] [--repeat 20]

Both implementations are called directly, so the FLASHSPLIT_DISABLE_NUMBA flag
does not matter here.  Outputs are checked for agreement before timing.
"""

import argparse
import time

import numpy as np

from flashsplit import kernels as K
from flashsplit._accel import HAS_NUMBA


def best_of(fn, repeat):
    fn()  # warm-up (includes JIT compile for numba)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def random_shapes(rng, n, size):
    rows = []
    for k in range(n):
        kind = k % 3
        p = rng.uniform(0, size, 6)
        if kind == K.SHAPE_CIRCLE:
            p[2] = rng.uniform(3, size / 4)
        elif kind == K.SHAPE_RECT:
            p[2:4] = rng.uniform(3, size / 4, 2)
            p[4] = np.cos(0.3)
            p[5] = np.sin(0.3)
        rows.append([kind, *p, *rng.uniform(0, 1, 3), rng.uniform(1, 2.5)])
    return np.array(rows)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--shapes", type=int, default=6)
    args = ap.parse_args()
    if not HAS_NUMBA:
        raise SystemExit("numba is not installed")
    rng = np.random.default_rng(0)
    n = args.size
    img = rng.uniform(0, 1, (n, n, 3))
    yy, xx = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64), indexing="ij")
    sx = xx + rng.uniform(-6, 6, (n, n))
    sy = yy + rng.uniform(-6, 6, (n, n))
    bg = rng.uniform(0, 1, (n, n, 3))
    depth = np.full((n, n), 2.5)
    shapes = random_shapes(rng, args.shapes, n)

    cases = {
        "bilinear_sample": (lambda: K._bilinear_sample_nb(img, sx, sy, K.PAD_CLAMP),
                            lambda: K._bilinear_sample_np(img, sx, sy, K.PAD_CLAMP)),
        f"rasterize_shapes(ss=4, {args.shapes} shapes)": (lambda: K._rasterize_nb(bg, depth, shapes, 4),
                                                         lambda: K._rasterize_np(bg, depth, shapes, 4)),
    }
    print(f"{'kernel':36s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  max|diff|")
    for name, (f_nb, f_np) in cases.items():
        a, b = f_nb(), f_np()
        diff = max(float(np.max(np.abs(np.asarray(x, np.float64) - np.asarray(y, np.float64)))) for x, y in zip(a, b))
        t_nb, t_np = best_of(f_nb, args.repeat), best_of(f_np, args.repeat)
        print(f"{name:36s} {t_nb * 1e3:10.3f} {t_np * 1e3:10.3f} {t_np / t_nb:8.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
