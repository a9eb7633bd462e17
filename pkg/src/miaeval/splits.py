"""Member / non-member split construction.

Three split methods over a pair of labeled corpora:

* truncate  — sample texts of token length > length_lo and cut each to a
              seeded uniform target length in [length_lo+1, length_hi]
* complete  — sample texts whose whole token length lies in [length_lo, length_hi)
* relative  — bin texts by deciles of the nonmember length distribution

Every split must reach ``min_examples`` per class or it is rejected, and
exactly ``min_examples`` examples per class are drawn (without replacement)
so that different seeds sample different sets.
"""

from __future__ import annotations

import dataclasses
import json
import zlib as _zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .records import (MEMBER, NONMEMBER, CorpusError, Example, ingest_corpus,
                      write_examples)

TRUNCATE = "truncate"
COMPLETE = "complete"
RELATIVE = "relative"
SPLIT_METHODS = (TRUNCATE, COMPLETE, RELATIVE)

FIXED_RANGES = tuple((lo, lo + 100) for lo in range(0, 1000, 100))
DEFAULT_MIN_EXAMPLES = 100

_METHOD_CODES = {TRUNCATE: 1, COMPLETE: 2, RELATIVE: 3}


def _domain_code(domain: str) -> int:
    return _zlib.crc32(domain.encode("utf-8"))


@dataclass(frozen=True)
class SplitSpec:
    method: str
    domain: str
    length_lo: int
    length_hi: int
    seed: int
    min_examples: int = DEFAULT_MIN_EXAMPLES

    def __post_init__(self):
        if self.method not in SPLIT_METHODS:
            raise ValueError(f"unknown split method {self.method!r}")
        if not (0 <= self.length_lo < self.length_hi):
            raise ValueError(f"invalid length range [{self.length_lo}, {self.length_hi})")
        if self.min_examples < 1:
            raise ValueError("min_examples must be >= 1")
        if self.method in (TRUNCATE, COMPLETE) and (self.length_lo, self.length_hi) not in FIXED_RANGES:
            raise ValueError(
                f"{self.method} split requires one of the fixed length ranges "
                f"{FIXED_RANGES[0]}..{FIXED_RANGES[-1]}, got "
                f"({self.length_lo}, {self.length_hi})")

    @property
    def split_id(self) -> str:
        return f"{self.method}-{self.domain}-L{self.length_lo}-{self.length_hi}"

    def admits_length(self, length: int) -> bool:
        """Whether a final example token length satisfies this spec's rule."""
        if self.method == TRUNCATE:
            return self.length_lo + 1 <= length <= self.length_hi
        return self.length_lo <= length < self.length_hi


@dataclass(frozen=True)
class SplitSet:
    spec: SplitSpec
    members: tuple[Example, ...]
    nonmembers: tuple[Example, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "nonmembers", tuple(self.nonmembers))
        spec = self.spec
        if len(self.members) < spec.min_examples or len(self.nonmembers) < spec.min_examples:
            raise ValueError(f"{spec.split_id}: fewer than {spec.min_examples} examples per class")
        member_ids = {e.example_id for e in self.members}
        nonmember_ids = {e.example_id for e in self.nonmembers}
        clash = member_ids & nonmember_ids
        if clash:
            raise ValueError(f"{spec.split_id}: member/nonmember ids overlap: {sorted(clash)[:5]}")
        for ex in self.members + self.nonmembers:
            if not spec.admits_length(ex.length):
                raise ValueError(
                    f"{spec.split_id}: example {ex.example_id} length {ex.length} "
                    f"violates the {spec.method} length rule")


@dataclass(frozen=True)
class SplitRejection:
    """A split that could not be built; carries the reason, not an error."""

    method: str
    domain: str
    length_lo: int
    length_hi: int
    seed: int
    reason: str

    @property
    def split_id(self) -> str:
        return f"{self.method}-{self.domain}-L{self.length_lo}-{self.length_hi}"


def _rng_for(spec: SplitSpec, extra: int = 0) -> np.random.Generator:
    return np.random.default_rng([spec.seed, _domain_code(spec.domain),
                                  _METHOD_CODES[spec.method],
                                  spec.length_lo, spec.length_hi, extra])


def _domain_examples(corpus: Sequence[Example], domain: str) -> list[Example]:
    return [ex for ex in corpus if ex.domain == domain]


def _draw(candidates: Sequence[Example], size: int, rng: np.random.Generator) -> list[Example]:
    idx = np.sort(rng.choice(len(candidates), size=size, replace=False))
    return [candidates[i] for i in idx]


def build_truncate_split(member_corpus: Sequence[Example],
                         nonmember_corpus: Sequence[Example],
                         spec: SplitSpec) -> SplitSet | SplitRejection:
    """Sample and prefix-truncate examples to target lengths in (length_lo, length_hi]."""
    assert spec.method == TRUNCATE
    members = [ex for ex in _domain_examples(member_corpus, spec.domain)
               if ex.length >= spec.length_lo + 1]
    nonmembers = [ex for ex in _domain_examples(nonmember_corpus, spec.domain)
                  if ex.length >= spec.length_lo + 1]
    rejection = _check_counts(spec, len(members), len(nonmembers))
    if rejection is not None:
        return rejection
    rng = _rng_for(spec)
    chosen_m = _draw(members, spec.min_examples, rng)
    targets_m = rng.integers(spec.length_lo + 1, spec.length_hi + 1, size=spec.min_examples)
    chosen_n = _draw(nonmembers, spec.min_examples, rng)
    targets_n = rng.integers(spec.length_lo + 1, spec.length_hi + 1, size=spec.min_examples)
    return SplitSet(
        spec=spec,
        members=tuple(_truncate(ex, int(t)) for ex, t in zip(chosen_m, targets_m)),
        nonmembers=tuple(_truncate(ex, int(t)) for ex, t in zip(chosen_n, targets_n)),
    )


def _truncate(ex: Example, target: int) -> Example:
    if ex.length <= target:
        return ex
    return dataclasses.replace(ex, tokens=ex.tokens[:target])


def _check_counts(spec: SplitSpec, n_members: int, n_nonmembers: int) -> SplitRejection | None:
    for label, count in ((MEMBER, n_members), (NONMEMBER, n_nonmembers)):
        if count < spec.min_examples:
            return SplitRejection(
                method=spec.method, domain=spec.domain, length_lo=spec.length_lo,
                length_hi=spec.length_hi, seed=spec.seed,
                reason=f"{label} candidates {count} < min_examples {spec.min_examples}")
    return None


def build_complete_split(member_corpus: Sequence[Example],
                         nonmember_corpus: Sequence[Example],
                         spec: SplitSpec) -> SplitSet | SplitRejection:
    """Sample examples whose whole token length lies in [length_lo, length_hi)."""
    assert spec.method == COMPLETE
    members = [ex for ex in _domain_examples(member_corpus, spec.domain)
               if spec.length_lo <= ex.length < spec.length_hi]
    nonmembers = [ex for ex in _domain_examples(nonmember_corpus, spec.domain)
                  if spec.length_lo <= ex.length < spec.length_hi]
    rejection = _check_counts(spec, len(members), len(nonmembers))
    if rejection is not None:
        return rejection
    rng = _rng_for(spec)
    return SplitSet(
        spec=spec,
        members=tuple(_draw(members, spec.min_examples, rng)),
        nonmembers=tuple(_draw(nonmembers, spec.min_examples, rng)),
    )


def nearest_rank_percentile(sorted_values: Sequence[int], percent: float) -> int:
    """Nearest-rank percentile: the ceil(p% · N)-th smallest value."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("empty data")
    rank = int(np.ceil(percent / 100.0 * n))
    rank = min(max(rank, 1), n)
    return int(sorted_values[rank - 1])


def decile_bin_edges(nonmember_lengths: Sequence[int]) -> list[int]:
    """Eleven ascending edges; bin i is [edges[i], edges[i+1]).

    Boundaries are nearest-rank percentiles of the nonmember lengths at
    10%..90%; the first bin starts at the minimum length and the last bin
    ends just past the maximum, so the bins partition the observed range.
    """
    lengths = sorted(int(v) for v in nonmember_lengths)
    if len(set(lengths)) < 10:
        raise CorpusError("degenerate decile basis: fewer than 10 distinct nonmember lengths")
    boundaries = [nearest_rank_percentile(lengths, p) for p in range(10, 100, 10)]
    edges = [lengths[0]] + [b + 1 for b in boundaries] + [lengths[-1] + 1]
    return edges


def build_relative_split(member_corpus: Sequence[Example],
                         nonmember_corpus: Sequence[Example],
                         domain: str, seed: int,
                         min_examples: int = DEFAULT_MIN_EXAMPLES
                         ) -> list[SplitSet | SplitRejection]:
    """Ten splits over decile bins of the nonmember length distribution.

    Both classes are sampled from the nonmember-derived bins; whole lengths
    only, no truncation.  Individual bins may come back as rejections.
    """
    members = _domain_examples(member_corpus, domain)
    nonmembers = _domain_examples(nonmember_corpus, domain)
    if not nonmembers:
        raise CorpusError(f"no nonmember examples for domain {domain!r}")
    edges = decile_bin_edges([ex.length for ex in nonmembers])
    out: list[SplitSet | SplitRejection] = []
    for i in range(10):
        lo, hi = edges[i], edges[i + 1]
        if hi <= lo:
            out.append(SplitRejection(method=RELATIVE, domain=domain, length_lo=lo,
                                      length_hi=hi, seed=seed,
                                      reason=f"decile bin {i} is empty (duplicate boundary)"))
            continue
        spec = SplitSpec(method=RELATIVE, domain=domain, length_lo=lo, length_hi=hi,
                         seed=seed, min_examples=min_examples)
        bin_members = [ex for ex in members if lo <= ex.length < hi]
        bin_nonmembers = [ex for ex in nonmembers if lo <= ex.length < hi]
        rejection = _check_counts(spec, len(bin_members), len(bin_nonmembers))
        if rejection is not None:
            out.append(rejection)
            continue
        rng = _rng_for(spec, extra=i)
        out.append(SplitSet(
            spec=spec,
            members=tuple(_draw(bin_members, min_examples, rng)),
            nonmembers=tuple(_draw(bin_nonmembers, min_examples, rng)),
        ))
    return out


# ---------------------------------------------------------------------------
# Persistence: a split directory is members.jsonl + nonmembers.jsonl + spec.json
# ---------------------------------------------------------------------------

def save_split_set(split: SplitSet, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_examples(split.members, out_dir / "members.jsonl")
    write_examples(split.nonmembers, out_dir / "nonmembers.jsonl")
    spec = split.spec
    manifest = {
        "method": spec.method,
        "domain": spec.domain,
        "length_lo": spec.length_lo,
        "length_hi": spec.length_hi,
        "seed": spec.seed,
        "min_examples": spec.min_examples,
        "split_id": spec.split_id,
        "n_members": len(split.members),
        "n_nonmembers": len(split.nonmembers),
    }
    with open(out_dir / "spec.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def load_split_set(split_dir: str | Path) -> SplitSet:
    split_dir = Path(split_dir)
    with open(split_dir / "spec.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    spec = SplitSpec(method=manifest["method"], domain=manifest["domain"],
                     length_lo=manifest["length_lo"], length_hi=manifest["length_hi"],
                     seed=manifest["seed"], min_examples=manifest["min_examples"])
    members = ingest_corpus(split_dir / "members.jsonl", MEMBER)
    nonmembers = ingest_corpus(split_dir / "nonmembers.jsonl", NONMEMBER)
    return SplitSet(spec=spec, members=tuple(members), nonmembers=tuple(nonmembers))
