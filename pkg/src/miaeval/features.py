"""Per-example membership feature scores.

Eleven scoring methods over token traces and generation records.  Every
score is oriented so that a larger value means "more member-like"; the
per-method sign flip that achieves this is recorded in orientation_note.
"""

from __future__ import annotations

import math
import zlib as _zlib
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .kernels import normalized_levenshtein
from .records import Example, GenerationRecord, TokenFrequencyTable, TokenTrace

METHODS = ("loss", "refer", "gradient", "zlib", "mink", "minkpp", "dcpdd",
           "pac", "recall", "samia", "cdd")

# Methods scored from TokenTraces (vs. GenerationRecords).
TRACE_METHODS = ("loss", "refer", "gradient", "zlib", "mink", "minkpp",
                 "dcpdd", "pac", "recall")
GENERATION_METHODS = ("samia", "cdd")

SimilarityFn = Callable[[Sequence[int], Sequence[int]], float]


class FeatureInputError(ValueError):
    """A scorer is missing a required input."""


@dataclass(frozen=True)
class MethodConfig:
    """Hyperparameters shared across the scoring methods."""

    method: str
    k_percent: float = 20.0
    pac_swap_fraction: float = 0.30
    pac_num_perturbations: int = 5
    recall_num_shots: int = 12
    samia_n: int = 10
    samia_temperature: float = 0.8
    cdd_n: int = 10
    dcpdd_ceiling: float = 1.0
    sigma_floor: float = 1e-6

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not (0.0 < self.k_percent <= 100.0):
            raise ValueError(f"k_percent {self.k_percent} outside (0, 100]")
        if self.dcpdd_ceiling <= 0:
            raise ValueError("dcpdd_ceiling must be positive")


@dataclass(frozen=True)
class FeatureScore:
    example_id: str
    method: str
    value: float
    orientation_note: str

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"{self.example_id}/{self.method}: non-finite score {self.value}")


def _k_count(n: int, k_percent: float) -> int:
    # ceil(k * n / 100) selected tokens, at least 1; the small epsilon keeps
    # exact-integer products from ceiling up on float noise.
    return max(1, math.ceil(k_percent * n / 100.0 - 1e-9))


def bottom_fraction_indices(values: Sequence[float], k_percent: float) -> np.ndarray:
    """Positions of the ceil(k%·n) smallest values, earliest position first on ties."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise FeatureInputError("cannot select from an empty sequence")
    count = _k_count(arr.size, k_percent)
    return np.argsort(arr, kind="stable")[:count]


def top_fraction_indices(values: Sequence[float], k_percent: float) -> np.ndarray:
    """Positions of the ceil(k%·n) largest values, earliest position first on ties."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise FeatureInputError("cannot select from an empty sequence")
    count = _k_count(arr.size, k_percent)
    return np.argsort(-arr, kind="stable")[:count]


# ---------------------------------------------------------------------------
# Gray-box scorers
# ---------------------------------------------------------------------------

def score_loss(trace: TokenTrace) -> FeatureScore:
    """Negated mean NLL: well-learned text scores high."""
    return FeatureScore(trace.example_id, "loss", -trace.loss,
                        "negated loss; larger = member-like")


def score_refer(trace: TokenTrace) -> FeatureScore:
    """Negated loss gap against a reference model."""
    if trace.ref_loss is None:
        raise FeatureInputError(f"{trace.example_id}: ref_loss missing for refer score")
    return FeatureScore(trace.example_id, "refer", -(trace.loss - trace.ref_loss),
                        "negated (loss - ref_loss); larger = member-like")


def score_gradient(trace: TokenTrace) -> FeatureScore:
    """Negated gradient norm: memorized text needs a smaller update."""
    if trace.gradient_norm is None:
        raise FeatureInputError(f"{trace.example_id}: gradient_norm missing for gradient score")
    return FeatureScore(trace.example_id, "gradient", -trace.gradient_norm,
                        "negated gradient norm; larger = member-like")


def compression_bits(text: str) -> int:
    """Bit length of the UTF-8 text under DEFLATE at the default level."""
    return 8 * len(_zlib.compress(text.encode("utf-8")))


def score_zlib(trace: TokenTrace, text: str) -> FeatureScore:
    """Loss calibrated by the compressed bit length of the text."""
    if not text:
        raise FeatureInputError(f"{trace.example_id}: empty text for zlib score")
    z = compression_bits(text)
    return FeatureScore(trace.example_id, "zlib", -trace.loss / z,
                        "negated loss / compressed bits; larger = member-like")


def score_mink(trace: TokenTrace, cfg: MethodConfig) -> FeatureScore:
    """Mean log-likelihood of the bottom-k% tokens."""
    if len(trace.logprob_target) == 0:
        raise FeatureInputError(f"{trace.example_id}: empty logprob_target")
    lp = np.asarray(trace.logprob_target, dtype=np.float64)
    idx = bottom_fraction_indices(lp, cfg.k_percent)
    return FeatureScore(trace.example_id, "mink", float(np.mean(lp[idx])),
                        "mean of lowest-k% log-probs; larger = member-like")


def score_minkpp(trace: TokenTrace, cfg: MethodConfig) -> FeatureScore:
    """Bottom-k% mean of per-step standardized log-likelihoods."""
    lp = np.asarray(trace.logprob_target, dtype=np.float64)
    mu = np.asarray(trace.mu_logprob, dtype=np.float64)
    sigma = np.asarray(trace.sigma_logprob, dtype=np.float64)
    if lp.size == 0:
        raise FeatureInputError(f"{trace.example_id}: empty logprob_target")
    if mu.size != lp.size or sigma.size != lp.size:
        raise FeatureInputError(f"{trace.example_id}: mu/sigma length mismatch with logprob_target")
    z = (lp - mu) / np.maximum(sigma, cfg.sigma_floor)
    idx = bottom_fraction_indices(z, cfg.k_percent)
    return FeatureScore(trace.example_id, "minkpp", float(np.mean(z[idx])),
                        "mean of lowest-k% standardized log-probs; larger = member-like")


def score_dcpdd(trace: TokenTrace, tokens: Sequence[int], freq: TokenFrequencyTable,
                cfg: MethodConfig) -> FeatureScore:
    """Clipped cross of target probability with corpus token rarity.

    Only the first occurrence of each target token id contributes; the very
    first predicted position is always a first occurrence, so the set is
    never empty.
    """
    lp = np.asarray(trace.logprob_target, dtype=np.float64)
    targets = list(tokens[1:])
    if len(targets) != lp.size:
        raise FeatureInputError(f"{trace.example_id}: tokens do not match trace length")
    if lp.size == 0:
        raise FeatureInputError(f"{trace.example_id}: empty logprob_target")
    seen: set[int] = set()
    total = 0.0
    count = 0
    for i, tok in enumerate(targets):
        if tok in seen:
            continue
        seen.add(tok)
        alpha = math.exp(lp[i]) * (-math.log(freq.frequency(tok)))
        total += min(alpha, cfg.dcpdd_ceiling)
        count += 1
    return FeatureScore(trace.example_id, "dcpdd", total / count,
                        "mean clipped p·log(1/freq) over first occurrences; "
                        "reported as computed (members expected larger)")


def _pac_delta(logprobs: Sequence[float], k_percent: float) -> float:
    lp = np.asarray(logprobs, dtype=np.float64)
    top = lp[top_fraction_indices(lp, k_percent)]
    bottom = lp[bottom_fraction_indices(lp, k_percent)]
    return float(np.mean(top) - np.mean(bottom))


def score_pac(trace: TokenTrace, perturbed_traces: Sequence[TokenTrace],
              cfg: MethodConfig) -> FeatureScore:
    """Spread change under token swapping.

    Swapping disturbs well-learned text the most, so the spread gap
    mean_perturbed - original grows with membership; the sign is folded in
    to keep the larger-is-member orientation uniform across methods.
    """
    if len(perturbed_traces) != cfg.pac_num_perturbations:
        raise FeatureInputError(
            f"{trace.example_id}: expected {cfg.pac_num_perturbations} perturbed "
            f"traces, got {len(perturbed_traces)}")
    if len(trace.logprob_target) == 0:
        raise FeatureInputError(f"{trace.example_id}: empty logprob_target")
    delta = _pac_delta(trace.logprob_target, cfg.k_percent)
    perturbed = [_pac_delta(p.logprob_target, cfg.k_percent) for p in perturbed_traces]
    return FeatureScore(trace.example_id, "pac", float(np.mean(perturbed)) - delta,
                        "mean perturbed spread minus original spread; "
                        "larger = member-like")


def perturb_tokens(tokens: Sequence[int], cfg: MethodConfig, seed: int) -> list[tuple[int, ...]]:
    """Token-swapped variants for the perturbation score, one per configured variant.

    Each variant applies max(1, ceil(swap_fraction·n) // 2) random position
    swaps, drawn from an rng seeded with (seed, variant index).
    """
    n = len(tokens)
    if n < 2:
        raise FeatureInputError("need at least 2 tokens to swap")
    n_pairs = max(1, math.ceil(cfg.pac_swap_fraction * n) // 2)
    variants = []
    for v in range(cfg.pac_num_perturbations):
        rng = np.random.default_rng([seed, v])
        seq = list(tokens)
        for _ in range(n_pairs):
            i, j = rng.choice(n, size=2, replace=False)
            seq[i], seq[j] = seq[j], seq[i]
        variants.append(tuple(seq))
    return variants


def score_recall(trace_conditioned: TokenTrace, trace_plain: TokenTrace) -> FeatureScore:
    """Ratio of prefix-conditioned to plain average log-likelihood."""
    if len(trace_conditioned.logprob_target) != len(trace_plain.logprob_target):
        raise FeatureInputError(
            f"{trace_plain.example_id}: conditioned/plain traces cover different spans")
    if len(trace_plain.logprob_target) == 0:
        raise FeatureInputError(f"{trace_plain.example_id}: empty logprob_target")
    ll_plain = float(np.mean(trace_plain.logprob_target))
    if abs(ll_plain) < 1e-12:
        raise FeatureInputError(f"{trace_plain.example_id}: degenerate plain log-likelihood")
    ll_cond = float(np.mean(trace_conditioned.logprob_target))
    return FeatureScore(trace_plain.example_id, "recall", ll_cond / ll_plain,
                        "LL(x|prefix)/LL(x); larger = member-like")


# ---------------------------------------------------------------------------
# Black-box scorers
# ---------------------------------------------------------------------------

def unigram_f1(a: Sequence[int], b: Sequence[int]) -> float:
    """Multiset unigram F1 overlap between two token sequences, in [0, 1]."""
    if not a or not b:
        return 0.0
    overlap = sum((Counter(a) & Counter(b)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(a)
    recall = overlap / len(b)
    return 2 * precision * recall / (precision + recall)


def score_samia(gen: GenerationRecord, similarity: SimilarityFn | None = None) -> FeatureScore:
    """Mean similarity of sampled continuations to the actual continuation."""
    if len(gen.reference_continuation) == 0:
        raise FeatureInputError(f"{gen.example_id}: empty reference continuation")
    sim = similarity if similarity is not None else unigram_f1
    values = [sim(sample, gen.reference_continuation) for sample in gen.sampled_continuations]
    return FeatureScore(gen.example_id, "samia", float(np.mean(values)),
                        "mean continuation similarity; larger = member-like")


def score_cdd(gen: GenerationRecord) -> FeatureScore:
    """Peakiness: mean (1 - normalized edit distance) to the greedy continuation."""
    if len(gen.greedy_continuation) == 0:
        raise FeatureInputError(f"{gen.example_id}: empty greedy continuation")
    sims = [1.0 - normalized_levenshtein(sample, gen.greedy_continuation)
            for sample in gen.sampled_continuations]
    return FeatureScore(gen.example_id, "cdd", float(np.mean(sims)),
                        "mean 1 - normalized edit distance; larger = member-like")


# ---------------------------------------------------------------------------
# Split-level scoring
# ---------------------------------------------------------------------------

@dataclass
class ScoringInputs:
    """Everything a method might need, keyed by example_id."""

    config: MethodConfig
    traces: Mapping[str, TokenTrace] = field(default_factory=dict)
    conditioned_traces: Mapping[str, TokenTrace] = field(default_factory=dict)
    perturbed_traces: Mapping[str, Sequence[TokenTrace]] = field(default_factory=dict)
    generations: Mapping[str, GenerationRecord] = field(default_factory=dict)
    frequency_table: TokenFrequencyTable | None = None
    similarity: SimilarityFn | None = None
    texts: Mapping[str, str] | None = None

    def text_for(self, example: Example) -> str:
        if self.texts is not None and example.example_id in self.texts:
            return self.texts[example.example_id]
        return example.text


def _missing_inputs(method: str, examples: Sequence[Example], inputs: ScoringInputs) -> list[str]:
    missing = []
    for ex in examples:
        eid = ex.example_id
        if method in TRACE_METHODS and eid not in inputs.traces:
            missing.append(f"{eid}: trace")
            continue
        if method == "refer" and inputs.traces[eid].ref_loss is None:
            missing.append(f"{eid}: ref_loss")
        elif method == "gradient" and inputs.traces[eid].gradient_norm is None:
            missing.append(f"{eid}: gradient_norm")
        elif method == "zlib" and not inputs.text_for(ex):
            missing.append(f"{eid}: text")
        elif method == "pac" and eid not in inputs.perturbed_traces:
            missing.append(f"{eid}: perturbed traces")
        elif method == "recall" and eid not in inputs.conditioned_traces:
            missing.append(f"{eid}: conditioned trace")
        elif method in GENERATION_METHODS and eid not in inputs.generations:
            missing.append(f"{eid}: generation record")
    return missing


def score_example(example: Example, method: str, inputs: ScoringInputs) -> FeatureScore:
    cfg = inputs.config
    if method == "loss":
        return score_loss(inputs.traces[example.example_id])
    if method == "refer":
        return score_refer(inputs.traces[example.example_id])
    if method == "gradient":
        return score_gradient(inputs.traces[example.example_id])
    if method == "zlib":
        return score_zlib(inputs.traces[example.example_id], inputs.text_for(example))
    if method == "mink":
        return score_mink(inputs.traces[example.example_id], cfg)
    if method == "minkpp":
        return score_minkpp(inputs.traces[example.example_id], cfg)
    if method == "dcpdd":
        return score_dcpdd(inputs.traces[example.example_id], example.tokens,
                           inputs.frequency_table, cfg)
    if method == "pac":
        return score_pac(inputs.traces[example.example_id],
                         inputs.perturbed_traces[example.example_id], cfg)
    if method == "recall":
        return score_recall(inputs.conditioned_traces[example.example_id],
                            inputs.traces[example.example_id])
    if method == "samia":
        return score_samia(inputs.generations[example.example_id], inputs.similarity)
    if method == "cdd":
        return score_cdd(inputs.generations[example.example_id])
    raise ValueError(f"unknown method {method!r}")


def score_split(members: Sequence[Example], nonmembers: Sequence[Example],
                method: str, inputs: ScoringInputs
                ) -> tuple[list[FeatureScore], list[FeatureScore]]:
    """Score every example of a split; missing inputs are reported in one error."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "dcpdd" and inputs.frequency_table is None:
        raise FeatureInputError("dcpdd requires a token frequency table")
    missing = (_missing_inputs(method, members, inputs)
               + _missing_inputs(method, nonmembers, inputs))
    if missing:
        raise FeatureInputError(
            f"{method}: missing inputs for {len(missing)} example(s): " + "; ".join(missing))
    member_scores = [score_example(ex, method, inputs) for ex in members]
    nonmember_scores = [score_example(ex, method, inputs) for ex in nonmembers]
    return member_scores, nonmember_scores


def config_for(method: str, overrides: Mapping[str, float] | None = None) -> MethodConfig:
    cfg = MethodConfig(method=method)
    if overrides:
        cfg = replace(cfg, **dict(overrides))
    return cfg


# ---------------------------------------------------------------------------
# FeatureScore JSONL
# ---------------------------------------------------------------------------

def write_scores(scores: Sequence[FeatureScore], path) -> None:
    from .records import _dump_jsonl

    _dump_jsonl(
        ({"example_id": s.example_id, "method": s.method, "value": s.value,
          "orientation_note": s.orientation_note} for s in scores),
        path,
    )


def read_scores(path) -> list[FeatureScore]:
    from .records import _iter_jsonl

    return [FeatureScore(example_id=str(row["example_id"]), method=str(row["method"]),
                         value=float(row["value"]),
                         orientation_note=str(row.get("orientation_note", "")))
            for _, row in _iter_jsonl(path)]
