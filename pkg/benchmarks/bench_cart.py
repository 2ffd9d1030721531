"""Compare the compiled CART kernel with the numpy fallback.

Usage: python3 benchmarks/bench_cart.py [--n 800] [--p 20] [--outputs 15] [--trees 20]
"""
import argparse
import time

import numpy as np

from fdid import _cart_py

try:
    from fdid import _cart
except ImportError:
    _cart = None


def grow(mod, X, Y, n_trees, mtry, seed=0):
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    trees = []
    for _ in range(n_trees):
        sample = rng.integers(0, n, n).astype(np.int64)
        trees.append(mod.build_tree(X, Y, sample, -1, 5, mtry, int(rng.integers(0, 2 ** 63))))
    return trees


def timed(fn, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=800)
    ap.add_argument("--p", type=int, default=20)
    ap.add_argument("--outputs", type=int, default=15)
    ap.add_argument("--trees", type=int, default=20)
    a = ap.parse_args()

    rng = np.random.default_rng(1)
    X = np.ascontiguousarray(rng.standard_normal((a.n, a.p)))
    Y = np.ascontiguousarray(np.sin(X[:, :1]) + 0.1 * rng.standard_normal((a.n, a.outputs)))
    mtry = -(-a.p // 3)

    t_py, trees_py = timed(lambda: grow(_cart_py, X, Y, a.trees, mtry), repeat=1)
    print(f"python   fit {a.trees} trees: {t_py:8.3f} s")
    if _cart is None:
        print("compiled extension not built; nothing to compare")
        return
    t_c, trees_c = timed(lambda: grow(_cart, X, Y, a.trees, mtry))
    print(f"compiled fit {a.trees} trees: {t_c:8.3f} s  (speedup {t_py / t_c:.1f}x)")

    same = all(all(np.array_equal(u, v) for u, v in zip(tp, tc))
               for tp, tc in zip(trees_py, trees_c))
    print(f"identical trees: {same}")

    tp, _ = timed(lambda: [_cart_py.predict_tree(X, *t) for t in trees_py], repeat=1)
    tc, _ = timed(lambda: [_cart.predict_tree(X, *t) for t in trees_c])
    print(f"predict  python {tp:.3f} s  compiled {tc:.3f} s  (speedup {tp / tc:.1f}x)")


if __name__ == "__main__":
    main()
