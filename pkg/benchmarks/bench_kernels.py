"""Benchmark the numba kernels against their numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py [--points 100000 --links 48 --repeat 5]

Reports wall time per call for both paths plus the worst numeric deviation,
so backend drift shows up immediately.
"""

import argparse
import time

import numpy as np

from motionblend import _backend, kernels


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def deviation(a, b):
    if isinstance(a, tuple):
        return max(deviation(x, y) for x, y in zip(a, b))
    if a.dtype.kind in "iu":
        return 0.0 if np.array_equal(a, b) else float("inf")
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--points", type=int, default=100_000)
    parser.add_argument("--links", type=int, default=48)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    if not _backend.HAVE_NUMBA:
        print("numba backend unavailable (MBGS_DISABLE_NUMBA set or numba missing); nothing to compare")
        return

    rng = np.random.default_rng(0)
    pts = rng.normal(size=(args.points, 3))
    starts = rng.normal(size=(args.links, 3))
    ends = starts + rng.normal(size=(args.links, 3))
    qrel = rng.normal(size=(args.links, 4))
    qrel /= np.linalg.norm(qrel, axis=1, keepdims=True)
    trel = rng.normal(size=(args.links, 3))
    w = rng.uniform(0, 1, (args.points, args.links))
    w /= w.sum(axis=1, keepdims=True)
    k = min(8, args.links)
    idx = np.argsort(-w, axis=1)[:, :k].astype(np.int64)
    wk = np.take_along_axis(w, idx, axis=1)
    wk /= wk.sum(axis=1, keepdims=True)
    tr_nk = rng.normal(size=(args.points, k, 3))
    rows = rng.integers(0, 512, args.points)
    cols = rng.integers(0, 512, args.points)
    depths = rng.uniform(0.5, 5.0, args.points)
    fps_pts = rng.normal(size=(20_000, 3))
    nn_a = rng.normal(size=(20_000, 3))
    nn_b = rng.normal(size=(2_000, 3))

    cases = [
        ("segment_distances", lambda: kernels.segment_distances_numba(pts, starts, ends),
         lambda: kernels.segment_distances_numpy(pts, starts, ends)),
        ("blend_tree", lambda: kernels.blend_tree_numba(qrel, trel, w),
         lambda: kernels.blend_tree_numpy(qrel, trel, w)),
        ("blend_deform(k=8)", lambda: kernels.blend_deform_numba(qrel, tr_nk, idx, wk),
         lambda: kernels.blend_deform_numpy(qrel, tr_nk, idx, wk)),
        ("zbuffer(512x512,r2)", lambda: kernels.zbuffer_numba(rows, cols, depths, 512, 512, 2),
         lambda: kernels.zbuffer_numpy(rows, cols, depths, 512, 512, 2)),
        ("fps(20k->512)", lambda: kernels.fps_sample_numba(fps_pts, 512, 0),
         lambda: kernels.fps_sample_numpy(fps_pts, 512, 0)),
        ("nearest(20k vs 2k)", lambda: kernels.nearest_indices_numba(nn_a, nn_b),
         lambda: kernels.nearest_indices_numpy(nn_a, nn_b)),
    ]

    print(f"{args.points} points, {args.links} links, best of {args.repeat}")
    print(f"{'kernel':22s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s} {'max dev':>10s}")
    for name, fn_nb, fn_np in cases:
        fn_nb()  # compile outside the timing loop
        t_nb, out_nb = timeit(fn_nb, args.repeat)
        t_np, out_np = timeit(fn_np, args.repeat)
        dev = deviation(out_nb, out_np)
        print(f"{name:22s} {t_nb * 1e3:9.2f}ms {t_np * 1e3:9.2f}ms {t_np / t_nb:7.1f}x {dev:10.2e}")


if __name__ == "__main__":
    main()
