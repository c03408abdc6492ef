"""Time the numba evaluation kernels against their pure-numpy counterparts.

    python3 benchmarks/bench_kernels.py [--queries 1000] [--db 20000] [--bits 64]

Both paths are checked for identical output before timing.
"""
import argparse
import time

import numpy as np

from schgan import kernels as K
from schgan._accel import HAVE_NUMBA


def best_of(fn, *args, repeat=3):
    fn(*args)  # warm-up (numba compiles on first call)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--queries", type=int, default=1000)
    ap.add_argument("--db", type=int, default=20000)
    ap.add_argument("--bits", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    w = -(-args.bits // 8)
    q = rng.integers(0, 256, (args.queries, w), dtype=np.uint8)
    db = rng.integers(0, 256, (args.db, w), dtype=np.uint8)
    d = K.hamming_matrix_numpy(q, db)
    order = K.rank_numpy(d)
    rel = np.take_along_axis(rng.random(d.shape) < 0.1, order, axis=1)
    ks = np.array([1, 50, 100, 500])

    cases = [
        ("hamming", K.hamming_matrix_numpy, K.hamming_matrix_numba, (q, db)),
        ("rank", K.rank_numpy, K.rank_numba, (d.astype(np.int64),)),
        ("average_precision", K.average_precision_numpy, K.average_precision_numba,
         (rel.astype(np.uint8),)),
        ("pr_curve", lambda r: K.pr_curve_numpy(r)[0], lambda r: K.pr_curve_numba(r)[0], (rel,)),
        ("topk_hits", K.topk_hits_numpy, K.topk_hits_numba, (rel, ks)),
    ]
    print(f"{args.queries} queries x {args.db} items, {args.bits} bits")
    print(f"{'kernel':<18} {'numpy s':>9} {'numba s':>9} {'speedup':>8}")
    for name, f_np, f_nb, a in cases:
        np.testing.assert_allclose(f_np(*a), f_nb(*a), rtol=0, atol=1e-12)
        t_np, t_nb = best_of(f_np, *a), best_of(f_nb, *a)
        print(f"{name:<18} {t_np:9.4f} {t_nb:9.4f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
