"""Canonical record types and their JSONL / CSV wire formats.

Every record exchanged between the corpus tools, the scorers, and the model
adapter is one of the frozen dataclasses below, serialized as JSONL with
snake_case keys matching the field names.  Missing optional scalars are
encoded as ``null``, never 0.  All log quantities are in nats.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

MEMBER = "member"
NONMEMBER = "nonmember"
LABELS = (MEMBER, NONMEMBER)

# Tolerance for the loss == -mean(logprob_target) consistency check.
LOSS_ATOL = 1e-6


class CorpusError(ValueError):
    """Malformed or inconsistent corpus / record file."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise CorpusError(msg)


@dataclass(frozen=True)
class Example:
    """One text with its domain, membership label, and token ids."""

    example_id: str
    domain: str
    label: str
    text: str
    tokens: tuple[int, ...]

    def __post_init__(self):
        _require(bool(self.example_id), "example_id must be non-empty")
        _require(self.label in LABELS, f"label must be one of {LABELS}, got {self.label!r}")
        _require(len(self.tokens) > 0, f"{self.example_id}: tokens must be non-empty")
        _require(all(isinstance(t, int) and t >= 0 for t in self.tokens),
                 f"{self.example_id}: tokens must be non-negative integers")
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TokenTrace:
    """Per-token conditional log-probabilities and next-token distribution stats.

    ``logprob_target[i]`` is log p(t_{i+1} | t_{<=i}); the first token of the
    example has no context and is excluded, so all per-step sequences have
    length ``len(tokens) - 1``.  ``mu_logprob`` / ``sigma_logprob`` are the
    probability-weighted mean / standard deviation of log-probs over the
    vocabulary at each step; ``entropy`` is the step entropy in nats.
    """

    example_id: str
    logprob_target: tuple[float, ...]
    mu_logprob: tuple[float, ...]
    sigma_logprob: tuple[float, ...]
    entropy: tuple[float, ...]
    loss: float
    ref_loss: float | None = None
    gradient_norm: float | None = None

    def __post_init__(self):
        for name in ("logprob_target", "mu_logprob", "sigma_logprob", "entropy"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))


@dataclass(frozen=True)
class GenerationRecord:
    """Sampled and greedy continuations of a prefix, for black-box scoring."""

    example_id: str
    prefix_tokens: tuple[int, ...]
    reference_continuation: tuple[int, ...]
    sampled_continuations: tuple[tuple[int, ...], ...]
    greedy_continuation: tuple[int, ...]
    temperature: float
    n_samples: int

    def __post_init__(self):
        object.__setattr__(self, "prefix_tokens", tuple(self.prefix_tokens))
        object.__setattr__(self, "reference_continuation", tuple(self.reference_continuation))
        object.__setattr__(self, "sampled_continuations",
                           tuple(tuple(s) for s in self.sampled_continuations))
        object.__setattr__(self, "greedy_continuation", tuple(self.greedy_continuation))
        _require(self.temperature > 0, f"{self.example_id}: temperature must be > 0")
        _require(self.n_samples == len(self.sampled_continuations),
                 f"{self.example_id}: n_samples != len(sampled_continuations)")
        _require(self.n_samples >= 1, f"{self.example_id}: need at least one sample")


@dataclass(frozen=True)
class LayerEmbedding:
    """Mean-pooled hidden state of one example at one layer."""

    example_id: str
    layer_index: int
    vector: tuple[float, ...]

    def __post_init__(self):
        _require(self.layer_index >= 0, f"{self.example_id}: layer_index must be >= 0")
        object.__setattr__(self, "vector", tuple(float(v) for v in self.vector))


@dataclass(frozen=True)
class TokenFrequencyTable:
    """Relative corpus frequency per token id, with a fallback for unseen ids."""

    frequencies: Mapping[int, float]
    fallback_frequency: float

    def __post_init__(self):
        freqs = {int(k): float(v) for k, v in self.frequencies.items()}
        for tok, f in freqs.items():
            _require(0.0 < f <= 1.0, f"token {tok}: frequency {f} outside (0, 1]")
        _require(0.0 < self.fallback_frequency <= 1.0,
                 f"fallback_frequency {self.fallback_frequency} outside (0, 1]")
        object.__setattr__(self, "frequencies", freqs)

    def frequency(self, token_id: int) -> float:
        return self.frequencies.get(int(token_id), self.fallback_frequency)


@dataclass(frozen=True)
class EvalResult:
    """One (method, split, model, seed) evaluation row."""

    method: str
    split_id: str
    domain: str
    model_tag: str
    seed: int
    auc: float
    threshold: float
    val_tpr: float
    val_fpr: float
    text_length_stat: float
    ngram_overlap_stat: float

    def __post_init__(self):
        _require(0.0 <= self.auc <= 1.0, f"auc {self.auc} outside [0, 1]")
        _require(0.0 <= self.val_tpr <= 1.0, f"val_tpr {self.val_tpr} outside [0, 1]")
        _require(0.0 <= self.val_fpr <= 1.0, f"val_fpr {self.val_fpr} outside [0, 1]")

    @property
    def split_method(self) -> str:
        return self.split_id.split("-", 1)[0]


# ---------------------------------------------------------------------------
# JSONL plumbing
# ---------------------------------------------------------------------------

def _dump_jsonl(rows: Iterable[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, allow_nan=False))
            fh.write("\n")


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}: line {lineno}: expected a JSON object")
            yield lineno, obj


def _row_field(path, lineno, row: dict, key: str, optional: bool = False):
    if key not in row:
        if optional:
            return None
        raise CorpusError(f"{path}: line {lineno}: missing field {key!r}")
    return row[key]


def ingest_corpus(path: str | Path, label: str) -> list[Example]:
    """Read an Example-per-line JSONL file, assigning ``label`` to every row.

    A row may carry its own ``label`` field; it must then agree with the
    requested one.  Ordering is preserved; duplicate example_ids are an error.
    """
    _require(label in LABELS, f"label must be one of {LABELS}, got {label!r}")
    examples: list[Example] = []
    seen: set[str] = set()
    for lineno, row in _iter_jsonl(path):
        row_label = row.get("label")
        if row_label is not None and row_label != label:
            raise CorpusError(f"{path}: line {lineno}: label {row_label!r} conflicts "
                              f"with requested {label!r}")
        try:
            ex = Example(
                example_id=str(_row_field(path, lineno, row, "example_id")),
                domain=str(_row_field(path, lineno, row, "domain")),
                label=label,
                text=str(_row_field(path, lineno, row, "text")),
                tokens=tuple(_row_field(path, lineno, row, "tokens")),
            )
        except (CorpusError, TypeError, ValueError) as exc:
            raise CorpusError(f"{path}: line {lineno}: {exc}") from exc
        if ex.example_id in seen:
            raise CorpusError(f"{path}: line {lineno}: duplicate example_id {ex.example_id!r}")
        seen.add(ex.example_id)
        examples.append(ex)
    return examples


def write_examples(examples: Iterable[Example], path: str | Path) -> None:
    _dump_jsonl(
        ({"example_id": e.example_id, "domain": e.domain, "label": e.label,
          "text": e.text, "tokens": list(e.tokens)} for e in examples),
        path,
    )


def read_traces(path: str | Path) -> list[TokenTrace]:
    traces = []
    for lineno, row in _iter_jsonl(path):
        try:
            traces.append(TokenTrace(
                example_id=str(_row_field(path, lineno, row, "example_id")),
                logprob_target=tuple(_row_field(path, lineno, row, "logprob_target")),
                mu_logprob=tuple(_row_field(path, lineno, row, "mu_logprob")),
                sigma_logprob=tuple(_row_field(path, lineno, row, "sigma_logprob")),
                entropy=tuple(_row_field(path, lineno, row, "entropy")),
                loss=float(_row_field(path, lineno, row, "loss")),
                ref_loss=_opt_float(row.get("ref_loss")),
                gradient_norm=_opt_float(row.get("gradient_norm")),
            ))
        except (TypeError, ValueError) as exc:
            raise CorpusError(f"{path}: line {lineno}: {exc}") from exc
    return traces


def _opt_float(value) -> float | None:
    return None if value is None else float(value)


def write_traces(traces: Iterable[TokenTrace], path: str | Path) -> None:
    _dump_jsonl(
        ({"example_id": t.example_id,
          "logprob_target": list(t.logprob_target),
          "mu_logprob": list(t.mu_logprob),
          "sigma_logprob": list(t.sigma_logprob),
          "entropy": list(t.entropy),
          "loss": t.loss,
          "ref_loss": t.ref_loss,
          "gradient_norm": t.gradient_norm} for t in traces),
        path,
    )


def read_generations(path: str | Path) -> list[GenerationRecord]:
    records = []
    for lineno, row in _iter_jsonl(path):
        try:
            records.append(GenerationRecord(
                example_id=str(_row_field(path, lineno, row, "example_id")),
                prefix_tokens=tuple(_row_field(path, lineno, row, "prefix_tokens")),
                reference_continuation=tuple(_row_field(path, lineno, row, "reference_continuation")),
                sampled_continuations=tuple(tuple(s) for s in _row_field(path, lineno, row, "sampled_continuations")),
                greedy_continuation=tuple(_row_field(path, lineno, row, "greedy_continuation")),
                temperature=float(_row_field(path, lineno, row, "temperature")),
                n_samples=int(_row_field(path, lineno, row, "n_samples")),
            ))
        except (CorpusError, TypeError, ValueError) as exc:
            raise CorpusError(f"{path}: line {lineno}: {exc}") from exc
    return records


def write_generations(records: Iterable[GenerationRecord], path: str | Path) -> None:
    _dump_jsonl(
        ({"example_id": g.example_id,
          "prefix_tokens": list(g.prefix_tokens),
          "reference_continuation": list(g.reference_continuation),
          "sampled_continuations": [list(s) for s in g.sampled_continuations],
          "greedy_continuation": list(g.greedy_continuation),
          "temperature": g.temperature,
          "n_samples": g.n_samples} for g in records),
        path,
    )


def read_embeddings(path: str | Path) -> list[LayerEmbedding]:
    rows = []
    for lineno, row in _iter_jsonl(path):
        try:
            rows.append(LayerEmbedding(
                example_id=str(_row_field(path, lineno, row, "example_id")),
                layer_index=int(_row_field(path, lineno, row, "layer_index")),
                vector=tuple(_row_field(path, lineno, row, "vector")),
            ))
        except (CorpusError, TypeError, ValueError) as exc:
            raise CorpusError(f"{path}: line {lineno}: {exc}") from exc
    return rows


def write_embeddings(rows: Iterable[LayerEmbedding], path: str | Path) -> None:
    _dump_jsonl(
        ({"example_id": e.example_id, "layer_index": e.layer_index,
          "vector": list(e.vector)} for e in rows),
        path,
    )


def read_frequency_table(path: str | Path) -> TokenFrequencyTable:
    """Read a frequency table: {token_id, freq} rows plus one {fallback_frequency} row."""
    freqs: dict[int, float] = {}
    fallback: float | None = None
    for lineno, row in _iter_jsonl(path):
        if "fallback_frequency" in row:
            if fallback is not None:
                raise CorpusError(f"{path}: line {lineno}: duplicate fallback_frequency")
            fallback = float(row["fallback_frequency"])
            continue
        tok = int(_row_field(path, lineno, row, "token_id"))
        if tok in freqs:
            raise CorpusError(f"{path}: line {lineno}: duplicate token_id {tok}")
        freqs[tok] = float(_row_field(path, lineno, row, "freq"))
    if fallback is None:
        raise CorpusError(f"{path}: missing fallback_frequency row")
    return TokenFrequencyTable(frequencies=freqs, fallback_frequency=fallback)


def write_frequency_table(table: TokenFrequencyTable, path: str | Path) -> None:
    rows = [{"token_id": tok, "freq": table.frequencies[tok]}
            for tok in sorted(table.frequencies)]
    rows.append({"fallback_frequency": table.fallback_frequency})
    _dump_jsonl(rows, path)


# ---------------------------------------------------------------------------
# Trace validation
# ---------------------------------------------------------------------------

def validate_trace(trace: TokenTrace, tokens: Sequence[int],
                   vocab_size: int | None = None) -> list[str]:
    """Check every TokenTrace invariant; return one message per violation.

    Violations are data, not failures: the returned list is empty iff the
    trace is consistent with ``tokens`` (and ``vocab_size`` when given).
    """
    report: list[str] = []
    lp = trace.logprob_target
    n_steps = len(lp)

    if n_steps != len(tokens) - 1:
        report.append(f"logprob_target length {n_steps} != len(tokens) - 1 = {len(tokens) - 1}")
    for name in ("mu_logprob", "sigma_logprob", "entropy"):
        seq = getattr(trace, name)
        if len(seq) != n_steps:
            report.append(f"{name} length {len(seq)} != logprob_target length {n_steps}")

    for name in ("logprob_target", "mu_logprob", "sigma_logprob", "entropy"):
        seq = getattr(trace, name)
        bad = [i for i, v in enumerate(seq) if not math.isfinite(v)]
        if bad:
            report.append(f"{name} has non-finite entries at positions {bad[:5]}")

    pos = [i for i, v in enumerate(lp) if v > 0]
    if pos:
        report.append(f"positive log-prob at positions {pos[:5]}")
    neg_sigma = [i for i, v in enumerate(trace.sigma_logprob) if v < 0]
    if neg_sigma:
        report.append(f"negative sigma_logprob at positions {neg_sigma[:5]}")
    neg_ent = [i for i, v in enumerate(trace.entropy) if v < 0]
    if neg_ent:
        report.append(f"negative entropy at positions {neg_ent[:5]}")
    if vocab_size is not None:
        cap = math.log(vocab_size) + 1e-9
        over = [i for i, v in enumerate(trace.entropy) if v > cap]
        if over:
            report.append(f"entropy exceeds log(vocab_size) at positions {over[:5]}")

    if trace.loss < 0:
        report.append(f"loss {trace.loss} is negative")
    if n_steps > 0 and math.isfinite(trace.loss):
        expected = -sum(lp) / n_steps
        if abs(trace.loss - expected) > LOSS_ATOL:
            report.append(f"loss {trace.loss} != -mean(logprob_target) = {expected}")
    if trace.ref_loss is not None and trace.ref_loss < 0:
        report.append(f"ref_loss {trace.ref_loss} is negative")
    if trace.gradient_norm is not None and trace.gradient_norm < 0:
        report.append(f"gradient_norm {trace.gradient_norm} is negative")
    return report


# ---------------------------------------------------------------------------
# Results CSV
# ---------------------------------------------------------------------------

RESULT_COLUMNS = ("method", "split_id", "domain", "model_tag", "seed", "auc",
                  "threshold", "val_tpr", "val_fpr", "text_length_stat",
                  "ngram_overlap_stat")

_FLOAT_COLUMNS = frozenset(RESULT_COLUMNS[5:])


def _render(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def serialize_results(rows: Sequence[EvalResult], path: str | Path) -> None:
    """Write EvalResult rows as CSV, deterministically, 9 significant digits."""
    _require(len(rows) > 0, "serialize_results requires at least one row")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_render(getattr(row, col)) for col in RESULT_COLUMNS])


def read_results(path: str | Path) -> list[EvalResult]:
    rows: list[EvalResult] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise CorpusError(f"{path}: unexpected results header {reader.fieldnames}")
        for rec in reader:
            kwargs = {}
            for col in RESULT_COLUMNS:
                raw = rec[col]
                if col == "seed":
                    kwargs[col] = int(raw)
                elif col in _FLOAT_COLUMNS:
                    kwargs[col] = float(raw)
                else:
                    kwargs[col] = raw
            rows.append(EvalResult(**kwargs))
    return rows
