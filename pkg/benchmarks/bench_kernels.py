#!/usr/bin/env python3
"""Benchmark the numba-jitted Levenshtein kernel against the NumPy fallback.

Usage:
    python benchmarks/bench_kernels.py [--pairs 2000] [--length 128]

MIAEVAL_NO_NUMBA only switches the path used by the package at import time;
this script times both implementations directly.
"""

import argparse
import time

import numpy as np
from numba import njit

from miaeval.kernels import _levenshtein_numpy, _levenshtein_rows


def bench(fn, pairs, warmup=2):
    for a, b in pairs[:warmup]:
        fn(a, b)
    start = time.perf_counter()
    total = 0
    for a, b in pairs:
        total += fn(a, b)
    elapsed = time.perf_counter() - start
    return elapsed, total


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=2000)
    parser.add_argument("--length", type=int, default=128)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    pairs = [(rng.integers(0, 50, size=args.length).astype(np.int64),
              rng.integers(0, 50, size=args.length).astype(np.int64))
             for _ in range(args.pairs)]

    jitted = njit(cache=True)(_levenshtein_rows)
    jitted(pairs[0][0], pairs[0][1])  # compile outside the timed region

    t_jit, sum_jit = bench(jitted, pairs)
    t_np, sum_np = bench(_levenshtein_numpy, pairs)
    assert sum_jit == sum_np, "paths disagree"

    n_cells = args.pairs * args.length * args.length
    print(f"{args.pairs} pairs of length {args.length} "
          f"({n_cells / 1e6:.1f}M DP cells)")
    print(f"  numba @njit   : {t_jit:8.3f}s  ({n_cells / t_jit / 1e6:8.1f} Mcells/s)")
    print(f"  numpy fallback: {t_np:8.3f}s  ({n_cells / t_np / 1e6:8.1f} Mcells/s)")
    print(f"  speedup       : {t_np / t_jit:8.1f}x")


if __name__ == "__main__":
    main()
