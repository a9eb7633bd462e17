"""Rank statistics, threshold selection, and the distribution-analysis battery.

All operations are pure; score orientation is assumed "larger = member-like"
and the classification rule is "predict member iff score >= threshold".
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import kolmogorov
from scipy.stats import rankdata

from .records import Example, EvalResult

OUTLIER_AUC_CUTOFF = 0.55


@dataclass(frozen=True)
class BoxplotStats:
    q1: float
    median: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]


@dataclass(frozen=True)
class KsTestResult:
    statistic: float
    p_value: float
    reject: bool


def _as_1d(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr


def roc_auc(member_scores: Sequence[float], nonmember_scores: Sequence[float]) -> float:
    """Rank-statistic ROC-AUC with ties counting 1/2.

    Equals the Mann-Whitney U statistic divided by n_m * n_n, which is also
    the exact trapezoidal area under the threshold-swept ROC curve.
    """
    members = _as_1d(member_scores, "member_scores")
    nonmembers = _as_1d(nonmember_scores, "nonmember_scores")
    if members.size == 0 or nonmembers.size == 0:
        raise ValueError("both score sets must be non-empty")
    pooled = np.concatenate([members, nonmembers])
    ranks = rankdata(pooled, method="average")
    rank_sum = float(np.sum(ranks[: members.size]))
    u = rank_sum - members.size * (members.size + 1) / 2.0
    return u / (members.size * nonmembers.size)


def _split_train_val(n: int, train_fraction: float, rng: np.random.Generator
                     ) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_train = int(math.floor(train_fraction * n))
    n_train = min(max(n_train, 1), n - 1)
    return perm[:n_train], perm[n_train:]


def threshold_candidates(scores: Sequence[float]) -> np.ndarray:
    """Midpoints between consecutive distinct pooled scores plus ±inf sentinels."""
    uniq = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    return np.concatenate([[-np.inf], mids, [np.inf]])


def _rates(member_scores: np.ndarray, nonmember_scores: np.ndarray,
           thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Fraction of each class at or above every threshold.
    m_sorted = np.sort(member_scores)
    n_sorted = np.sort(nonmember_scores)
    tpr = 1.0 - np.searchsorted(m_sorted, thresholds, side="left") / m_sorted.size
    fpr = 1.0 - np.searchsorted(n_sorted, thresholds, side="left") / n_sorted.size
    return tpr, fpr


def select_threshold(member_scores: Sequence[float], nonmember_scores: Sequence[float],
                     train_fraction: float = 0.8, seed: int = 0
                     ) -> tuple[float, float, float]:
    """Geometric-mean threshold on a stratified seeded train split.

    Picks the candidate maximizing sqrt(TPR * (1 - FPR)) on the training
    portion (smallest candidate on ties) and reports validation TPR / FPR
    under the rule "member iff score >= threshold".
    """
    members = _as_1d(member_scores, "member_scores")
    nonmembers = _as_1d(nonmember_scores, "nonmember_scores")
    if members.size < 5 or nonmembers.size < 5:
        raise ValueError("need at least 5 scores per class to select a threshold")
    rng = np.random.default_rng(seed)
    m_train_idx, m_val_idx = _split_train_val(members.size, train_fraction, rng)
    n_train_idx, n_val_idx = _split_train_val(nonmembers.size, train_fraction, rng)
    m_train, m_val = members[m_train_idx], members[m_val_idx]
    n_train, n_val = nonmembers[n_train_idx], nonmembers[n_val_idx]

    cands = threshold_candidates(np.concatenate([m_train, n_train]))
    tpr, fpr = _rates(m_train, n_train, cands)
    objective = np.sqrt(tpr * (1.0 - fpr))
    best = int(np.argmax(objective))  # argmax returns the first (smallest) maximizer
    t = float(cands[best])

    val_tpr = float(np.mean(m_val >= t))
    val_fpr = float(np.mean(n_val >= t))
    return t, val_tpr, val_fpr


def threshold_objective(member_scores: Sequence[float], nonmember_scores: Sequence[float],
                        threshold: float) -> float:
    """sqrt(TPR * (1 - FPR)) of a fixed threshold on the given scores."""
    members = _as_1d(member_scores, "member_scores")
    nonmembers = _as_1d(nonmember_scores, "nonmember_scores")
    tpr = float(np.mean(members >= threshold))
    fpr = float(np.mean(nonmembers >= threshold))
    return math.sqrt(tpr * (1.0 - fpr))


def outlier_set(results: Iterable[EvalResult], cutoff: float = OUTLIER_AUC_CUTOFF) -> set[str]:
    """Identifiers of results whose AUC strictly exceeds the cutoff.

    The identifier drops the method so that sets from different methods are
    comparable in the overlap matrix.
    """
    return {f"{r.split_id}|{r.model_tag}|{r.seed}" for r in results if r.auc > cutoff}


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def overlap_matrix(outliers_by_method: Mapping[str, set[str]]) -> tuple[list[str], np.ndarray]:
    """Jaccard overlap of outlier sets for every ordered method pair."""
    methods = list(outliers_by_method)
    if len(methods) < 2:
        raise ValueError("need at least 2 methods for an overlap matrix")
    mat = np.ones((len(methods), len(methods)), dtype=np.float64)
    for i, a in enumerate(methods):
        for j, b in enumerate(methods):
            mat[i, j] = jaccard(outliers_by_method[a], outliers_by_method[b])
    return methods, mat


@dataclass(frozen=True)
class DensityGroup:
    group: str
    bin_edges: tuple[float, ...]
    density: tuple[float, ...]
    in_range_fraction: float
    out_of_range_fraction: float
    count: int


def auc_density(results: Sequence[EvalResult], lo: float = 0.50, hi: float = 0.58,
                bin_width: float = 0.005, group_by: str = "method") -> list[DensityGroup]:
    """Per-group histogram density of AUC over [lo, hi).

    Each group's histogram integrates to its in-range fraction; mass outside
    [lo, hi) is reported separately.  ``group_by`` is one of method, domain,
    model_tag, seed, split_method.
    """
    if not lo < hi:
        raise ValueError("lo must be < hi")
    n_bins = int(round((hi - lo) / bin_width))
    edges = lo + bin_width * np.arange(n_bins + 1)
    groups: dict[str, list[float]] = {}
    for r in results:
        key = str(getattr(r, group_by))
        groups.setdefault(key, []).append(r.auc)
    out = []
    for key in sorted(groups):
        aucs = np.asarray(groups[key], dtype=np.float64)
        in_range = aucs[(aucs >= lo) & (aucs < hi)]
        counts, _ = np.histogram(in_range, bins=edges)
        density = counts / (aucs.size * bin_width)
        out.append(DensityGroup(
            group=key,
            bin_edges=tuple(edges),
            density=tuple(density),
            in_range_fraction=in_range.size / aucs.size,
            out_of_range_fraction=1.0 - in_range.size / aucs.size,
            count=aucs.size,
        ))
    return out


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    x_arr = _as_1d(x, "x")
    y_arr = _as_1d(y, "y")
    if x_arr.size != y_arr.size:
        raise ValueError("x and y must have equal length")
    if x_arr.size < 3:
        raise ValueError("need at least 3 observations")
    rx = rankdata(x_arr, method="average")
    ry = rankdata(y_arr, method="average")
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise ValueError("correlation undefined for a constant vector")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float(np.dot(rx, ry) / math.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


def _ngram_counts(examples: Iterable[Example], n: int) -> Counter:
    counts: Counter = Counter()
    for ex in examples:
        toks = ex.tokens
        for i in range(len(toks) - n + 1):
            counts[toks[i:i + n]] += 1
    return counts


def seven_gram_overlap(members: Sequence[Example], nonmembers: Sequence[Example],
                       n: int = 7) -> float:
    """Occurrences of n-grams shared by both classes, per pooled token.

    Texts shorter than n tokens contribute no n-grams; the denominator is the
    summed token length of both classes.
    """
    member_counts = _ngram_counts(members, n)
    nonmember_counts = _ngram_counts(nonmembers, n)
    shared = member_counts.keys() & nonmember_counts.keys()
    occurrences = sum(member_counts[g] + nonmember_counts[g] for g in shared)
    total_len = sum(len(e.tokens) for e in members) + sum(len(e.tokens) for e in nonmembers)
    if total_len == 0:
        return 0.0
    return occurrences / total_len


def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: sup |ECDF_a - ECDF_b|."""
    a_sorted = np.sort(_as_1d(a, "a"))
    b_sorted = np.sort(_as_1d(b, "b"))
    pooled = np.concatenate([a_sorted, b_sorted])
    cdf_a = np.searchsorted(a_sorted, pooled, side="right") / a_sorted.size
    cdf_b = np.searchsorted(b_sorted, pooled, side="right") / b_sorted.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def ks_test(a: Sequence[float], b: Sequence[float], alpha: float = 0.05) -> KsTestResult:
    """Two-sample KS test with the asymptotic Kolmogorov p-value."""
    a_arr = _as_1d(a, "a")
    b_arr = _as_1d(b, "b")
    if a_arr.size < 5 or b_arr.size < 5:
        raise ValueError("need at least 5 observations per sample")
    d = ks_statistic(a_arr, b_arr)
    en = math.sqrt(a_arr.size * b_arr.size / (a_arr.size + b_arr.size))
    p = float(kolmogorov(en * d))
    p = min(max(p, 0.0), 1.0)
    return KsTestResult(statistic=d, p_value=p, reject=bool(p < alpha))


def hypothesis_pass_rate(rejects: Sequence[bool]) -> float:
    """Fraction of splits whose member/nonmember score distributions differ."""
    if len(rejects) == 0:
        raise ValueError("need at least one split")
    return sum(bool(r) for r in rejects) / len(rejects)


def js_divergence(hist_a: Sequence[float], hist_b: Sequence[float]) -> float:
    """Jensen-Shannon divergence between two normalized histograms, in nats."""
    a = _as_1d(hist_a, "hist_a")
    b = _as_1d(hist_b, "hist_b")
    if a.size != b.size:
        raise ValueError("histograms must have equal length")
    for name, h in (("hist_a", a), ("hist_b", b)):
        if np.any(h < 0):
            raise ValueError(f"{name} has negative mass")
        if abs(float(np.sum(h)) - 1.0) > 1e-9:
            raise ValueError(f"{name} is not normalized (sum = {float(np.sum(h))})")
    m = (a + b) / 2.0

    def _kl(p: np.ndarray, q: np.ndarray) -> float:
        mask = p > 0
        return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))

    return 0.5 * _kl(a, m) + 0.5 * _kl(b, m)


def histogram_unit_interval(values: Sequence[float], n_bins: int = 10) -> np.ndarray:
    """Normalized histogram of values in [0, 1] with equal-width bins."""
    arr = _as_1d(values, "values")
    if arr.size == 0:
        raise ValueError("need at least one value")
    if np.any((arr < 0) | (arr > 1)):
        raise ValueError("values must lie in [0, 1]")
    counts, _ = np.histogram(arr, bins=n_bins, range=(0.0, 1.0))
    return counts / arr.size


def boxplot_stats(values: Sequence[float]) -> BoxplotStats:
    """Quartiles by linear interpolation, Tukey 1.5·IQR whiskers, rest outliers."""
    arr = _as_1d(values, "values")
    if arr.size == 0:
        raise ValueError("need at least one value")
    q1, median, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    whisker_lo = float(np.min(inside))
    whisker_hi = float(np.max(inside))
    outliers = np.sort(arr[(arr < lo_fence) | (arr > hi_fence)])
    return BoxplotStats(q1=float(q1), median=float(median), q3=float(q3),
                        whisker_lo=whisker_lo, whisker_hi=whisker_hi,
                        outliers=tuple(float(v) for v in outliers))
