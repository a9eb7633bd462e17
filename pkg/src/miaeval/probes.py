"""Embedding-separability and decoding-dynamics analyses."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .records import MEMBER, NONMEMBER, GenerationRecord, LayerEmbedding, TokenTrace

DEFAULT_ENTROPY_STEPS = 36
CENTROID_EPS = 1e-12


@dataclass(frozen=True)
class EntropyCurves:
    """Per-step class-mean entropies and their accumulated difference."""

    max_step: int
    mean_member: tuple[float, ...]
    mean_nonmember: tuple[float, ...]
    accumulated_diff: tuple[float, ...]
    n_member: int
    n_nonmember: int
    n_excluded_member: int
    n_excluded_nonmember: int


def db_index(member_vecs: Sequence[Sequence[float]],
             nonmember_vecs: Sequence[Sequence[float]]) -> float:
    """Two-cluster Davies-Bouldin score; lower means better separated.

    (mean within-cluster distance of each class, summed) divided by the
    distance between the class centroids.
    """
    m = np.asarray(member_vecs, dtype=np.float64)
    n = np.asarray(nonmember_vecs, dtype=np.float64)
    if m.ndim != 2 or n.ndim != 2 or m.shape[0] == 0 or n.shape[0] == 0:
        raise ValueError("both clusters must be non-empty 2-D arrays")
    if m.shape[1] != n.shape[1]:
        raise ValueError("clusters must share vector dimension")
    c_m = m.mean(axis=0)
    c_n = n.mean(axis=0)
    gap = float(np.linalg.norm(c_m - c_n))
    if gap < CENTROID_EPS:
        raise ValueError("degenerate centroids: cluster means coincide")
    s_m = float(np.mean(np.linalg.norm(m - c_m, axis=1)))
    s_n = float(np.mean(np.linalg.norm(n - c_n, axis=1)))
    return (s_m + s_n) / gap


def entropy_curves(traces_member: Iterable[TokenTrace],
                   traces_nonmember: Iterable[TokenTrace],
                   max_step: int = DEFAULT_ENTROPY_STEPS) -> EntropyCurves:
    """Class-mean per-step entropies over the first ``max_step`` decode steps.

    Traces with fewer than ``max_step`` entropy entries are excluded and
    counted rather than padded, which would bias the per-step means.
    """
    def collect(traces: Iterable[TokenTrace]) -> tuple[np.ndarray, int]:
        kept, excluded = [], 0
        for t in traces:
            if len(t.entropy) >= max_step:
                kept.append(t.entropy[:max_step])
            else:
                excluded += 1
        if not kept:
            return np.empty((0, max_step)), excluded
        return np.asarray(kept, dtype=np.float64), excluded

    member_mat, excl_m = collect(traces_member)
    nonmember_mat, excl_n = collect(traces_nonmember)
    if member_mat.shape[0] == 0:
        raise ValueError(f"no member trace has >= {max_step} entropy steps")
    if nonmember_mat.shape[0] == 0:
        raise ValueError(f"no nonmember trace has >= {max_step} entropy steps")
    mean_m = tuple(float(v) for v in member_mat.mean(axis=0))
    mean_n = tuple(float(v) for v in nonmember_mat.mean(axis=0))
    # Sequential running sum so the telescoping identity is reproducible
    # bit-for-bit from the returned per-step means.
    accumulated = tuple(itertools.accumulate(n - m for m, n in zip(mean_m, mean_n)))
    return EntropyCurves(
        max_step=max_step,
        mean_member=mean_m,
        mean_nonmember=mean_n,
        accumulated_diff=accumulated,
        n_member=member_mat.shape[0],
        n_nonmember=nonmember_mat.shape[0],
        n_excluded_member=excl_m,
        n_excluded_nonmember=excl_n,
    )


def layer_separability_profile(embeddings: Iterable[LayerEmbedding],
                               labels: Mapping[str, str]) -> list[tuple[int, float]]:
    """DB score per layer, ascending layer order.

    ``labels`` maps example_id to member/nonmember; every layer must contain
    embeddings from both classes.
    """
    by_layer: dict[int, dict[str, list]] = {}
    for emb in embeddings:
        label = labels.get(emb.example_id)
        if label not in (MEMBER, NONMEMBER):
            raise ValueError(f"no membership label for example {emb.example_id!r}")
        by_layer.setdefault(emb.layer_index, {MEMBER: [], NONMEMBER: []})[label].append(emb.vector)
    profile = []
    for layer in sorted(by_layer):
        classes = by_layer[layer]
        if not classes[MEMBER] or not classes[NONMEMBER]:
            raise ValueError(f"layer {layer}: missing one membership class")
        profile.append((layer, db_index(classes[MEMBER], classes[NONMEMBER])))
    return profile


def memorization_score(gen: GenerationRecord, k: int = 32) -> float:
    """Fraction of the first k greedy tokens matching the actual continuation.

    When either sequence is shorter than k, the comparison covers the
    available prefix and normalizes by the compared length.
    """
    if len(gen.reference_continuation) == 0:
        raise ValueError(f"{gen.example_id}: empty reference continuation")
    if len(gen.greedy_continuation) == 0:
        raise ValueError(f"{gen.example_id}: empty greedy continuation")
    compare = min(k, len(gen.greedy_continuation), len(gen.reference_continuation))
    matches = sum(1 for i in range(compare)
                  if gen.greedy_continuation[i] == gen.reference_continuation[i])
    return matches / compare
