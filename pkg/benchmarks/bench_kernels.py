"""Compare the compiled and pure-Python kernels on tree growing and scoring.

    python benchmarks/bench_kernels.py [--rows 2000] [--features 25] [--repeat 3]

Both backends must produce identical trees; the script checks that before timing.
"""
import argparse
import time

import numpy as np

from stacktier import kernels
from stacktier.learners import _presort


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=2000)
    ap.add_argument("--features", type=int, default=25)
    ap.add_argument("--depth", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    X = rng.normal(size=(args.rows, args.features))
    y = (X[:, :5].sum(axis=1) + rng.normal(size=args.rows) > 0).astype(np.float64)
    XT, order = _presort(X)
    w = np.ones(args.rows)
    grow = (XT, order, w, w * y, np.zeros(args.rows), kernels.MODE_GINI, args.depth, 1, 0.0,
            args.features, 0.0, 0.0, np.uint64(1))

    impls = kernels.backends()
    results = {}
    for name, mod in impls.items():
        t_grow, tree = _time(lambda: mod.build_tree(*grow), args.repeat)
        feat, thr, left, right, leaf_of = tree
        value = np.zeros(len(feat))
        np.add.at(value, leaf_of, y)
        counts = np.bincount(leaf_of, minlength=len(feat))
        value = np.divide(value, counts, out=np.zeros_like(value), where=counts > 0)
        n_trees = 50
        offs = np.arange(n_trees + 1, dtype=np.int64) * len(feat)
        tile = lambda a: np.ascontiguousarray(np.tile(a, n_trees))
        apply_args = (X, tile(feat), tile(thr), tile(left), tile(right), tile(value), offs)

        def score():
            out = np.zeros(args.rows)
            mod.ensemble_apply(*apply_args, out, False)
            return out

        t_apply, scores = _time(score, args.repeat)
        results[name] = (t_grow, t_apply, tree, scores)
        print(f"{name:>8}: build_tree {t_grow * 1e3:9.2f} ms   "
              f"ensemble_apply(50 trees) {t_apply * 1e3:9.2f} ms")

    if len(results) == 2:
        (_, _, ta, sa), (_, _, tb, sb) = results["cython"], results["python"]
        same = all(np.array_equal(a, b) for a, b in zip(ta, tb)) and np.array_equal(sa, sb)
        print(f"identical outputs: {same}")
        print(f"speed-up build_tree {results['python'][0] / results['cython'][0]:.1f}x, "
              f"ensemble_apply {results['python'][1] / results['cython'][1]:.1f}x")
    else:
        print("compiled backend unavailable; only the fallback was timed")


if __name__ == "__main__":
    main()
