"""Hot numeric kernels: Levenshtein distance over token-id sequences.

The edit-distance inner loop dominates black-box scoring (n generated
continuations per example, O(len_a * len_b) each), so it is JIT-compiled
with numba.  Set ``MIAEVAL_NO_NUMBA=1`` to select the vectorized pure-NumPy
fallback instead; both paths return identical integers.
``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np


def _numba_disabled() -> bool:
    return os.environ.get("MIAEVAL_NO_NUMBA", "").strip() not in ("", "0")


def _levenshtein_rows(a: np.ndarray, b: np.ndarray) -> int:
    # Two-row DP, scalar inner loop; compiled by numba when enabled.
    n = a.shape[0]
    m = b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = prev[j - 1]
            if ai != b[j - 1]:
                cost += 1
            dele = prev[j] + 1
            ins = cur[j - 1] + 1
            best = cost
            if dele < best:
                best = dele
            if ins < best:
                best = ins
            cur[j] = best
        prev, cur = cur, prev
    return int(prev[m])


def _levenshtein_numpy(a: np.ndarray, b: np.ndarray) -> int:
    # Row recurrence with the prefix-scan trick: within a row,
    # cur[j] = min(t[j], cur[j-1] + 1) is a min-plus scan, so
    # cur = minimum.accumulate(u - idx) + idx with u = [row_head, t].
    n = a.shape[0]
    m = b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    idx = np.arange(m + 1, dtype=np.int64)
    prev = idx.copy()
    for i in range(1, n + 1):
        subst = prev[:-1] + (a[i - 1] != b)
        t = np.minimum(prev[1:] + 1, subst)
        u = np.concatenate((np.array([i], dtype=np.int64), t))
        prev = np.minimum.accumulate(u - idx) + idx
    return int(prev[m])


if _numba_disabled():
    USING_NUMBA = False
    _levenshtein_impl = _levenshtein_numpy
else:
    from numba import njit

    USING_NUMBA = True
    _levenshtein_impl = njit(cache=True)(_levenshtein_rows)


def levenshtein(a: Sequence[int], b: Sequence[int]) -> int:
    """Exact Levenshtein edit distance between two token-id sequences."""
    arr_a = np.asarray(a, dtype=np.int64)
    arr_b = np.asarray(b, dtype=np.int64)
    return _levenshtein_impl(arr_a, arr_b)


def normalized_levenshtein(a: Sequence[int], b: Sequence[int]) -> float:
    """Edit distance divided by max(len(a), len(b)); 0.0 for two empty sequences."""
    denom = max(len(a), len(b))
    if denom == 0:
        return 0.0
    return levenshtein(a, b) / denom
