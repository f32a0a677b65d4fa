"""Time the numba kernels against the pure-numpy fallbacks.

    python benchmarks/bench_kernels.py            # FB15k-237-sized shapes
    python benchmarks/bench_kernels.py --quick    # small shapes, a few seconds

Each kernel is run once per backend before timing so numba compilation is
excluded.  The two backends' outputs are compared before anything is timed.
"""

import argparse
import time

import numpy as np

from dsmt import _kernels


def cases(quick):
    rng = np.random.default_rng(0)
    if quick:
        n_edges, d, batch, n_ent, img = 5_000, 64, 32, 2_000, (8, 8)
    else:
        n_edges, d, batch, n_ent, img = 272_115, 100, 128, 14_541, (20, 20)
    a, b = rng.normal(size=(n_edges, d)), rng.normal(size=(n_edges, d))
    g = rng.normal(size=(n_edges, d))
    x = rng.normal(size=(batch, 1, *img))
    w = rng.normal(size=(32, 1, 3, 3))
    gy = rng.normal(size=(batch, 32, img[0] - 2, img[1] - 2))
    owners = rng.integers(0, n_ent, n_edges)
    scores = rng.integers(0, 50, size=(batch * 2, n_ent)).astype(np.float64)
    targets = rng.integers(0, n_ent, batch * 2)
    filters = [np.unique(np.append(rng.integers(0, n_ent, 5), t)) for t in targets]
    indptr = np.concatenate([[0], np.cumsum([len(f) for f in filters])])
    indices = np.concatenate(filters)
    return {
        "corr_forward": lambda k: k.corr_forward(a, b),
        "corr_backward": lambda k: k.corr_backward(g, a, b),
        "conv2d_forward": lambda k: k.conv2d_forward(x, w, 0),
        "conv2d_backward": lambda k: k.conv2d_backward(gy, x, w, 0),
        "segment_sum": lambda k: k.segment_sum(a, owners, n_ent),
        "rank_counts": lambda k: k.rank_counts(scores, targets, indptr, indices),
    }


def _flat(out):
    parts = out if isinstance(out, tuple) else (out,)
    return np.concatenate([np.ravel(p).astype(np.float64) for p in parts])


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    print(f"{'kernel':<18}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>10}{'max |diff|':>12}")
    for name, run in cases(args.quick).items():
        ref = _flat(run(_kernels.NUMPY))
        diff = np.abs(_flat(run(_kernels.NUMBA)) - ref).max()
        tb = best_time(lambda: run(_kernels.NUMBA), args.repeat)
        tn = best_time(lambda: run(_kernels.NUMPY), args.repeat)
        print(f"{name:<18}{tb * 1e3:>12.2f}{tn * 1e3:>12.2f}{tn / tb:>9.2f}x{diff:>12.1e}")


if __name__ == "__main__":
    main()
