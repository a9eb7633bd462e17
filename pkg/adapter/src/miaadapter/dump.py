"""Batch dump mode: read a corpus of texts, emit JSONL record files.

The output layout matches what the evaluation toolkit's dump-mode runner
reads: examples.jsonl (tokenized, text kept faithful to the token sequence),
traces.jsonl, conditioned_traces.jsonl, perturbed_traces.jsonl,
generations.jsonl, embeddings.jsonl.
"""

from __future__ import annotations

import json
import math
import zlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .service import ModelService
from .tokenizer import decode

DEFAULT_SWAP_FRACTION = 0.30
DEFAULT_NUM_PERTURBATIONS = 5


def read_corpus(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON") from exc
            for key in ("example_id", "domain", "label"):
                if key not in row:
                    raise ValueError(f"{path}: line {lineno}: missing {key!r}")
            if "text" not in row and "tokens" not in row:
                raise ValueError(f"{path}: line {lineno}: needs text or tokens")
            rows.append(row)
    return rows


def _write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, allow_nan=False) + "\n")


def swap_perturbations(tokens: Sequence[int], seed: int,
                       num_variants: int = DEFAULT_NUM_PERTURBATIONS,
                       swap_fraction: float = DEFAULT_SWAP_FRACTION) -> list[list[int]]:
    """Seeded random position swaps, max(1, ceil(f*n)//2) pairs per variant."""
    n = len(tokens)
    if n < 2:
        raise ValueError("need at least 2 tokens to swap")
    n_pairs = max(1, math.ceil(swap_fraction * n) // 2)
    variants = []
    for v in range(num_variants):
        rng = np.random.default_rng([seed, v])
        seq = list(tokens)
        for _ in range(n_pairs):
            i, j = rng.choice(n, size=2, replace=False)
            seq[i], seq[j] = seq[j], seq[i]
        variants.append(seq)
    return variants


def _example_seed(example_id: str) -> int:
    return zlib.crc32(example_id.encode("utf-8")) % (2 ** 31)


def dump_corpus(service: ModelService, corpus_paths: Sequence[str | Path],
                out_dir: str | Path, *, traces: bool = True,
                conditioned: bool = False, perturbed: bool = False,
                generations: bool = False, embeddings: bool = False,
                gradients: bool = False, n_samples: int = 10,
                temperature: float = 0.8, seed: int = 0) -> dict:
    """Run the requested endpoints over every corpus row; returns counts."""
    out_dir = Path(out_dir)
    rows: list[dict] = []
    seen: set[str] = set()
    for path in corpus_paths:
        for row in read_corpus(path):
            if row["example_id"] in seen:
                raise ValueError(f"duplicate example_id {row['example_id']!r}")
            seen.add(row["example_id"])
            rows.append(row)

    examples, trace_rows, cond_rows, pert_rows, gen_rows, emb_rows = [], [], [], [], [], []
    for row in rows:
        eid = row["example_id"]
        tokens = [int(t) for t in row["tokens"]] if row.get("tokens") \
            else service.tokenize(row["text"])
        text = decode(tokens)
        examples.append({"example_id": eid, "domain": row["domain"],
                         "label": row["label"], "text": text, "tokens": tokens})

        if traces:
            trace = service.trace(tokens=tokens)
            if gradients:
                trace["gradient_norm"] = service.gradient_norm(tokens=tokens)
            trace_rows.append({"example_id": eid, **{k: trace[k] for k in (
                "logprob_target", "mu_logprob", "sigma_logprob", "entropy",
                "loss", "ref_loss", "gradient_norm")}})
        if conditioned:
            cond = service.trace_conditioned(tokens=tokens)
            cond_rows.append({"example_id": eid, **{k: cond[k] for k in (
                "logprob_target", "mu_logprob", "sigma_logprob", "entropy",
                "loss", "ref_loss", "gradient_norm")}})
        if perturbed:
            for variant in swap_perturbations(tokens, seed=_example_seed(eid)):
                v_trace = service.trace(tokens=variant)
                pert_rows.append({"example_id": eid, **{k: v_trace[k] for k in (
                    "logprob_target", "mu_logprob", "sigma_logprob", "entropy",
                    "loss", "ref_loss", "gradient_norm")}})
        if generations:
            half = max(1, len(tokens) // 2)
            prefix, reference = tokens[:half], tokens[half:]
            if not reference:
                prefix, reference = tokens[:-1], tokens[-1:]
            gen = service.generate(prefix, n=n_samples, temperature=temperature,
                                   max_new_tokens=len(reference),
                                   seed=(seed * 1000003 + _example_seed(eid)) % 2 ** 31)
            gen_rows.append({"example_id": eid, "prefix_tokens": prefix,
                             "reference_continuation": reference,
                             "sampled_continuations": gen["sampled_continuations"],
                             "greedy_continuation": gen["greedy_continuation"],
                             "temperature": temperature, "n_samples": n_samples})
        if embeddings:
            for layer_index, vector in enumerate(service.hidden_states(tokens=tokens)):
                emb_rows.append({"example_id": eid, "layer_index": layer_index,
                                 "vector": vector})

    _write_jsonl(out_dir / "examples.jsonl", examples)
    counts = {"examples": len(examples)}
    if traces:
        _write_jsonl(out_dir / "traces.jsonl", trace_rows)
        counts["traces"] = len(trace_rows)
    if conditioned:
        _write_jsonl(out_dir / "conditioned_traces.jsonl", cond_rows)
        counts["conditioned_traces"] = len(cond_rows)
    if perturbed:
        _write_jsonl(out_dir / "perturbed_traces.jsonl", pert_rows)
        counts["perturbed_traces"] = len(pert_rows)
    if generations:
        _write_jsonl(out_dir / "generations.jsonl", gen_rows)
        counts["generations"] = len(gen_rows)
    if embeddings:
        _write_jsonl(out_dir / "embeddings.jsonl", emb_rows)
        counts["embeddings"] = len(emb_rows)
    return counts
