"""Compiled vs pure-Python FGW kernels.

    python3 benchmarks/bench_fgw.py [--sizes 4 8 16] [--pairs 20] [--repeat 3]

Times ``fgw_distance`` (exact solver) on random graph pairs with each kernel
backend, checks both give the same values and prints the speedup.
"""

import argparse
import time

import numpy as np

from pgrmood.graph import Graph, symmetrize_upper
from pgrmood.ot import FgwConfig, fgw_distance, get_kernels


def random_pairs(n, count, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        pair = []
        for _ in range(2):
            a = symmetrize_upper((rng.random((n, n)) < 0.3).astype(float))
            pair.append(Graph(a, rng.standard_normal((n, 4))))
        out.append(tuple(pair))
    return out


def time_backend(pairs, backend, repeat):
    cfg = FgwConfig(alpha=0.5, backend=backend)
    best, values = np.inf, None
    for _ in range(repeat):
        start = time.perf_counter()
        values = [fgw_distance(g1, g2, cfg)[0] for g1, g2 in pairs]
        best = min(best, time.perf_counter() - start)
    return best, np.array(values)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--sizes", type=int, nargs="+", default=[4, 8, 16, 32])
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    try:
        get_kernels("compiled")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    print(f"{'n':>4} {'python ms/pair':>15} {'compiled ms/pair':>17} {'speedup':>8} {'max |diff|':>11}")
    for n in args.sizes:
        pairs = random_pairs(n, args.pairs, seed=n)
        t_py, v_py = time_backend(pairs, "python", args.repeat)
        t_c, v_c = time_backend(pairs, "compiled", args.repeat)
        diff = float(np.max(np.abs(v_py - v_c)))
        print(f"{n:>4} {1e3 * t_py / len(pairs):>15.3f} {1e3 * t_c / len(pairs):>17.3f} {t_py / t_c:>7.1f}x "
              f"{diff:>11.1e}")


if __name__ == "__main__":
    main()
