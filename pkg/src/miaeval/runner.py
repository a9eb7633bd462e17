"""Run-matrix execution: split preparation, planning, cached scoring, reports.

A run crosses methods x splits x model tags x seeds.  Completed keys are
cached in an append-only state file keyed by run key plus an input content
digest, so a killed run resumes without recomputation and produces the same
results table as an uninterrupted one.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import threading
import zlib as _zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .adapter_client import AdapterClient
from .config import ExperimentConfig
from .features import (GENERATION_METHODS, MethodConfig, ScoringInputs,
                       perturb_tokens, score_split)
from .probes import EntropyCurves, entropy_curves
from .records import (MEMBER, NONMEMBER, CorpusError, EvalResult,
                      TokenFrequencyTable, TokenTrace, _iter_jsonl,
                      ingest_corpus, read_frequency_table, read_generations,
                      read_traces, serialize_results)
from .splits import (RELATIVE, TRUNCATE, SplitRejection, SplitSet, SplitSpec,
                     build_complete_split, build_relative_split,
                     build_truncate_split, save_split_set)
from .stats import (auc_density, boxplot_stats, hypothesis_pass_rate, ks_test,
                    outlier_set, overlap_matrix, roc_auc, select_threshold,
                    seven_gram_overlap, spearman)

logger = logging.getLogger(__name__)

STATE_FILE = "state.jsonl"
REPORT_DIR = "reports"


class RunAborted(RuntimeError):
    """Failed keys exceeded the failure budget."""


@dataclass(frozen=True, order=True)
class RunKey:
    method: str
    split_id: str
    model_tag: str
    seed: int

    def encode(self) -> str:
        return f"{self.method}|{self.split_id}|{self.model_tag}|{self.seed}"

    @classmethod
    def decode(cls, text: str) -> "RunKey":
        method, split_id, model_tag, seed = text.split("|")
        return cls(method=method, split_id=split_id, model_tag=model_tag, seed=int(seed))


@dataclass
class SplitInventory:
    splits: dict[tuple[str, int], SplitSet] = field(default_factory=dict)
    rejections: list[SplitRejection] = field(default_factory=list)
    dropped: dict[str, list[str]] = field(default_factory=dict)  # split method -> domains


def prepare_splits(cfg: ExperimentConfig, persist: bool = True) -> SplitInventory:
    """Build every admissible split for every configured seed.

    A domain is kept for a split method only when every one of its length
    bins reaches min_examples in both classes; otherwise the whole domain is
    dropped for that method and the per-bin rejections are recorded.
    """
    inventory = SplitInventory()
    corpora = {domain: (ingest_corpus(paths[0], MEMBER), ingest_corpus(paths[1], NONMEMBER))
               for domain, paths in sorted(cfg.corpora.items())}

    for split_method in cfg.split_methods:
        for domain, (members, nonmembers) in corpora.items():
            built: dict[tuple[str, int], SplitSet] = {}
            rejections: list[SplitRejection] = []
            for seed in cfg.seeds:
                if split_method == RELATIVE:
                    outcomes = build_relative_split(members, nonmembers, domain, seed,
                                                    cfg.min_examples)
                else:
                    builder = (build_truncate_split if split_method == TRUNCATE
                               else build_complete_split)
                    outcomes = []
                    for lo, hi in cfg.length_ranges:
                        spec = SplitSpec(method=split_method, domain=domain, length_lo=lo,
                                         length_hi=hi, seed=seed,
                                         min_examples=cfg.min_examples)
                        outcomes.append(builder(members, nonmembers, spec))
                for outcome in outcomes:
                    if isinstance(outcome, SplitRejection):
                        rejections.append(outcome)
                    else:
                        built[(outcome.spec.split_id, seed)] = outcome
            if rejections:
                inventory.rejections.extend(rejections)
                inventory.dropped.setdefault(split_method, []).append(domain)
                for rej in rejections:
                    logger.info("rejected split %s seed %s: %s",
                                rej.split_id, rej.seed, rej.reason)
                logger.info("dropping domain %r for split method %r", domain, split_method)
            else:
                inventory.splits.update(built)

    if persist:
        for (split_id, seed), split in sorted(inventory.splits.items()):
            save_split_set(split, cfg.output_dir / "splits" / split_id / f"seed{seed}")
    return inventory


def plan_matrix(cfg: ExperimentConfig,
                inventory: SplitInventory | None = None) -> list[RunKey]:
    """Full method x split x model x seed cross product in lexicographic order."""
    if inventory is None:
        inventory = prepare_splits(cfg, persist=False)
    split_ids = sorted({split_id for split_id, _ in inventory.splits})
    keys = [RunKey(method=m, split_id=s, model_tag=t, seed=seed)
            for m in cfg.methods for s in split_ids
            for t in cfg.model_tags for seed in cfg.seeds]
    return sorted(keys)


# ---------------------------------------------------------------------------
# Input loading
# ---------------------------------------------------------------------------

_DUMP_FILES = {
    "traces": "traces.jsonl",
    "conditioned": "conditioned_traces.jsonl",
    "perturbed": "perturbed_traces.jsonl",
    "generations": "generations.jsonl",
    "examples": "examples.jsonl",
}


def dump_dir_for(cfg: ExperimentConfig, key: RunKey) -> Path | None:
    root = cfg.dumps.get(key.model_tag)
    if root is None:
        return None
    return Path(root) / key.split_id / f"seed{key.seed}"


def _needed_files(method: str) -> list[str]:
    files = []
    if method in GENERATION_METHODS:
        files.append(_DUMP_FILES["generations"])
    else:
        files.append(_DUMP_FILES["traces"])
        if method == "recall":
            files.append(_DUMP_FILES["conditioned"])
        if method == "pac":
            files.append(_DUMP_FILES["perturbed"])
        if method == "zlib":
            files.append(_DUMP_FILES["examples"])
    return files


def _group_perturbed(traces: Iterable[TokenTrace]) -> dict[str, list[TokenTrace]]:
    grouped: dict[str, list[TokenTrace]] = {}
    for t in traces:
        grouped.setdefault(t.example_id, []).append(t)
    return grouped


def load_dump_inputs(dump_dir: Path, method: str, method_cfg: MethodConfig,
                     freq_table: TokenFrequencyTable | None) -> ScoringInputs:
    inputs = ScoringInputs(config=method_cfg, frequency_table=freq_table)
    if method in GENERATION_METHODS:
        gens = read_generations(dump_dir / _DUMP_FILES["generations"])
        inputs.generations = {g.example_id: g for g in gens}
        return inputs
    traces = read_traces(dump_dir / _DUMP_FILES["traces"])
    inputs.traces = {t.example_id: t for t in traces}
    if method == "recall":
        conditioned = read_traces(dump_dir / _DUMP_FILES["conditioned"])
        inputs.conditioned_traces = {t.example_id: t for t in conditioned}
    if method == "pac":
        inputs.perturbed_traces = _group_perturbed(
            read_traces(dump_dir / _DUMP_FILES["perturbed"]))
    if method == "zlib":
        # examples.jsonl, when present, carries texts retokenized to match the
        # (possibly truncated) token sequences that were traced.
        examples_path = dump_dir / _DUMP_FILES["examples"]
        if examples_path.exists():
            inputs.texts = {str(row["example_id"]): str(row["text"])
                            for _, row in _iter_jsonl(examples_path)}
    return inputs


def _example_seed(run_seed: int, example_id: str) -> int:
    return (run_seed * 1000003 + _zlib.crc32(example_id.encode("utf-8"))) % (2 ** 31)


def fetch_live_inputs(cfg: ExperimentConfig, key: RunKey, split: SplitSet,
                      method_cfg: MethodConfig,
                      freq_table: TokenFrequencyTable | None) -> ScoringInputs:
    """Pull per-example inputs from the adapter service instead of dumps."""
    client = AdapterClient(cfg.adapter_endpoint)
    inputs = ScoringInputs(config=method_cfg, frequency_table=freq_table)
    examples = list(split.members) + list(split.nonmembers)
    method = key.method
    if method in GENERATION_METHODS:
        n = max(method_cfg.samia_n, method_cfg.cdd_n)
        gens = {}
        for ex in examples:
            half = max(1, len(ex.tokens) // 2)
            prefix, reference = ex.tokens[:half], ex.tokens[half:]
            if not reference:
                prefix, reference = ex.tokens[:-1], ex.tokens[-1:]
            gens[ex.example_id] = client.generate(
                ex.example_id, prefix, reference, n=n,
                temperature=method_cfg.samia_temperature,
                max_new_tokens=len(reference),
                seed=_example_seed(key.seed, ex.example_id))
        inputs.generations = gens
        return inputs

    traces: dict[str, TokenTrace] = {}
    for ex in examples:
        trace = client.trace(ex.example_id, ex.tokens)
        if method == "gradient" and trace.gradient_norm is None:
            trace = dataclasses.replace(trace, gradient_norm=client.gradient_norm(ex.tokens))
        traces[ex.example_id] = trace
    inputs.traces = traces
    if method == "recall":
        inputs.conditioned_traces = {
            ex.example_id: client.trace_conditioned(
                ex.example_id, ex.tokens, num_shots=method_cfg.recall_num_shots)
            for ex in examples}
    if method == "pac":
        perturbed = {}
        for ex in examples:
            variants = perturb_tokens(ex.tokens, method_cfg,
                                      seed=_example_seed(key.seed, ex.example_id))
            perturbed[ex.example_id] = [client.trace(ex.example_id, v) for v in variants]
        inputs.perturbed_traces = perturbed
    return inputs


# ---------------------------------------------------------------------------
# Digests and state
# ---------------------------------------------------------------------------

class _FileHasher:
    def __init__(self):
        self._memo: dict[Path, str] = {}

    def digest(self, path: Path) -> str:
        path = Path(path)
        if path not in self._memo:
            if path.exists():
                self._memo[path] = hashlib.sha256(path.read_bytes()).hexdigest()
            else:
                self._memo[path] = "missing"
        return self._memo[path]


def key_digest(cfg: ExperimentConfig, key: RunKey, hasher: _FileHasher) -> str:
    """Content hash of everything a key's result depends on."""
    parts: dict[str, str] = {"key": key.encode()}
    split_dir = cfg.output_dir / "splits" / key.split_id / f"seed{key.seed}"
    for name in ("members.jsonl", "nonmembers.jsonl", "spec.json"):
        parts[f"split/{name}"] = hasher.digest(split_dir / name)
    dump_dir = dump_dir_for(cfg, key)
    if dump_dir is not None:
        for name in _needed_files(key.method):
            parts[f"dump/{name}"] = hasher.digest(dump_dir / name)
    if key.method == "dcpdd" and cfg.freq_table is not None:
        parts["freq_table"] = hasher.digest(cfg.freq_table)
    cfg_json = json.dumps(
        {f: getattr(cfg.method_config(key.method), f)
         for f in MethodConfig.__dataclass_fields__},
        sort_keys=True)
    parts["method_config"] = hashlib.sha256(cfg_json.encode()).hexdigest()
    blob = json.dumps(parts, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _read_state(path: Path) -> dict[str, dict]:
    state: dict[str, dict] = {}
    if not path.exists():
        return state
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                continue  # torn write from a killed run; the key will be redone
            state[row["key"]] = row
    return state


def _result_to_dict(result: EvalResult) -> dict:
    return {f: getattr(result, f) for f in
            ("method", "split_id", "domain", "model_tag", "seed", "auc", "threshold",
             "val_tpr", "val_fpr", "text_length_stat", "ngram_overlap_stat")}


def _result_from_dict(payload: dict) -> EvalResult:
    return EvalResult(**payload)


def _curves_to_dict(curves: EntropyCurves | None) -> dict | None:
    if curves is None:
        return None
    return {"max_step": curves.max_step,
            "mean_member": list(curves.mean_member),
            "mean_nonmember": list(curves.mean_nonmember),
            "accumulated_diff": list(curves.accumulated_diff),
            "n_member": curves.n_member,
            "n_nonmember": curves.n_nonmember,
            "n_excluded_member": curves.n_excluded_member,
            "n_excluded_nonmember": curves.n_excluded_nonmember}


@dataclass
class ExecuteOutcome:
    results: list[EvalResult]
    ks_rows: dict[str, dict]                 # key string -> ks payload
    curves: dict[str, dict]                  # "split|tag|seed" -> curve payload
    failed: dict[str, str]                   # key string -> error message
    cached: int = 0


def evaluate_key(cfg: ExperimentConfig, key: RunKey, split: SplitSet,
                 freq_table: TokenFrequencyTable | None) -> dict:
    """Score one run key; returns the state payload (result + ks + curves)."""
    method_cfg = cfg.method_config(key.method)
    dump_dir = dump_dir_for(cfg, key)
    if dump_dir is not None and dump_dir.exists():
        inputs = load_dump_inputs(dump_dir, key.method, method_cfg, freq_table)
    elif cfg.adapter_endpoint is not None:
        inputs = fetch_live_inputs(cfg, key, split, method_cfg, freq_table)
    else:
        raise CorpusError(f"{key.encode()}: no dump directory at {dump_dir} "
                          f"and no adapter endpoint configured")

    member_scores, nonmember_scores = score_split(split.members, split.nonmembers,
                                                  key.method, inputs)
    m_vals = [s.value for s in member_scores]
    n_vals = [s.value for s in nonmember_scores]
    auc = roc_auc(m_vals, n_vals)
    threshold, val_tpr, val_fpr = select_threshold(m_vals, n_vals, seed=key.seed)
    lengths = [ex.length for ex in split.members] + [ex.length for ex in split.nonmembers]
    result = EvalResult(
        method=key.method, split_id=key.split_id, domain=split.spec.domain,
        model_tag=key.model_tag, seed=key.seed, auc=auc, threshold=threshold,
        val_tpr=val_tpr, val_fpr=val_fpr,
        text_length_stat=float(np.mean(lengths)),
        ngram_overlap_stat=seven_gram_overlap(split.members, split.nonmembers),
    )
    ks = ks_test(m_vals, n_vals)
    curves = None
    if inputs.traces:
        try:
            curves = entropy_curves(
                [inputs.traces[ex.example_id] for ex in split.members],
                [inputs.traces[ex.example_id] for ex in split.nonmembers])
        except ValueError:
            curves = None
    payload = _result_to_dict(result)
    payload["threshold"] = result.threshold if math.isfinite(result.threshold) else None
    return {
        "result": payload,
        "threshold_is_inf": None if math.isfinite(result.threshold)
        else ("+" if result.threshold > 0 else "-"),
        "ks": {"statistic": ks.statistic, "p_value": ks.p_value, "reject": ks.reject},
        "curves": _curves_to_dict(curves),
    }


def _restore_result(payload: dict, threshold_is_inf: str | None) -> EvalResult:
    data = dict(payload)
    if data.get("threshold") is None:
        data["threshold"] = math.inf if threshold_is_inf == "+" else -math.inf
    return _result_from_dict(data)


def _compute_row(cfg: ExperimentConfig, key: RunKey, digest: str,
                 inventory: SplitInventory,
                 freq_table: TokenFrequencyTable | None) -> dict:
    key_str = key.encode()
    split = inventory.splits.get((key.split_id, key.seed))
    try:
        if split is None:
            raise CorpusError(f"split {key.split_id} seed {key.seed} not built")
        payload = evaluate_key(cfg, key, split, freq_table)
        return {"key": key_str, "digest": digest, "status": "ok", **payload}
    except Exception as exc:  # noqa: BLE001 - a failed key must not kill the run
        logger.warning("key %s failed: %s", key_str, exc)
        return {"key": key_str, "digest": digest, "status": "failed",
                "error": f"{type(exc).__name__}: {exc}"}


def execute(cfg: ExperimentConfig, keys: Sequence[RunKey],
            inventory: SplitInventory,
            on_key_done: Callable[[RunKey, str], None] | None = None) -> ExecuteOutcome:
    """Run every key, skipping cached-and-unchanged ones; abort over budget.

    Each completed key appends one JSON line to the state file and is never
    recomputed while its input digest matches.  Failed keys are recorded,
    retried on the next run, and never corrupt other keys' results.  With
    workers > 1 pending keys run in a thread pool behind a single state
    writer; the final results are order-independent.
    """
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    state_path = cfg.output_dir / STATE_FILE
    state = _read_state(state_path)
    hasher = _FileHasher()
    freq_table = read_frequency_table(cfg.freq_table) if cfg.freq_table else None

    outcome = ExecuteOutcome(results=[], ks_rows={}, curves={}, failed={})
    max_failures = cfg.failure_budget * len(keys)

    digests = {key: key_digest(cfg, key, hasher) for key in keys}
    pending: list[RunKey] = []

    def collect(key: RunKey, row: dict) -> None:
        key_str = key.encode()
        if row["status"] == "ok":
            result = _restore_result(row["result"], row.get("threshold_is_inf"))
            outcome.results.append(result)
            outcome.ks_rows[key_str] = row["ks"]
            if row.get("curves"):
                triple = f"{key.split_id}|{key.model_tag}|{key.seed}"
                outcome.curves.setdefault(triple, row["curves"])
        else:
            outcome.failed[key_str] = row["error"]

    for key in keys:
        cached = state.get(key.encode())
        if cached is not None and cached.get("status") == "ok" \
                and cached.get("digest") == digests[key]:
            outcome.cached += 1
            collect(key, cached)
            if on_key_done is not None:
                on_key_done(key, "ok")
        else:
            pending.append(key)

    def over_budget() -> bool:
        return len(outcome.failed) > max_failures

    with open(state_path, "a", encoding="utf-8") as state_fh:

        def finish(key: RunKey, row: dict) -> None:
            state_fh.write(json.dumps(row, sort_keys=True) + "\n")
            state_fh.flush()
            collect(key, row)

        if cfg.workers <= 1:
            for key in pending:
                row = _compute_row(cfg, key, digests[key], inventory, freq_table)
                finish(key, row)
                if over_budget():
                    raise RunAborted(
                        f"{len(outcome.failed)} failed keys exceed the "
                        f"{cfg.failure_budget:.0%} budget over {len(keys)} keys")
                if on_key_done is not None:
                    on_key_done(key, row["status"])
        else:
            from concurrent.futures import ThreadPoolExecutor, as_completed

            write_lock = threading.Lock()
            aborted = False
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = {pool.submit(_compute_row, cfg, key, digests[key],
                                       inventory, freq_table): key
                           for key in pending}
                for future in as_completed(futures):
                    key = futures[future]
                    row = future.result()
                    with write_lock:
                        finish(key, row)
                        if over_budget() and not aborted:
                            aborted = True
                            for other in futures:
                                other.cancel()
                    if on_key_done is not None:
                        on_key_done(key, row["status"])
            if aborted:
                raise RunAborted(
                    f"{len(outcome.failed)} failed keys exceed the "
                    f"{cfg.failure_budget:.0%} budget over {len(keys)} keys")

    outcome.results.sort(key=lambda r: (r.method, r.split_id, r.model_tag, r.seed))
    return outcome


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, allow_nan=False) + "\n")


def _fmt(value: float) -> str:
    return f"{value:.9g}"


DENSITY_HEADER_TAIL = ["bin_lo", "bin_hi", "density", "in_range_fraction",
                       "out_of_range_fraction", "count"]


def density_table(results: Sequence[EvalResult], dim: str) -> tuple[list[str], list[list]]:
    rows = []
    for g in auc_density(results, group_by=dim):
        for i, dens in enumerate(g.density):
            rows.append([g.group, _fmt(g.bin_edges[i]), _fmt(g.bin_edges[i + 1]),
                         _fmt(dens), _fmt(g.in_range_fraction),
                         _fmt(g.out_of_range_fraction), g.count])
    return [dim, *DENSITY_HEADER_TAIL], rows


def outlier_table(results: Sequence[EvalResult], model_tags: Sequence[str],
                  cutoff: float = 0.55) -> tuple[list[str], list[list]]:
    """Per-method outlier counts by model tag plus total / max / mean AUC."""
    rows = []
    for method in sorted({r.method for r in results}):
        method_results = [r for r in results if r.method == method]
        per_tag = [sum(1 for r in method_results
                       if r.model_tag == tag and r.auc > cutoff) for tag in model_tags]
        outlier_aucs = [r.auc for r in method_results if r.auc > cutoff]
        num = len(outlier_aucs)
        rows.append([method, *per_tag, num,
                     _fmt(max(outlier_aucs)) if num else "",
                     _fmt(float(np.mean(outlier_aucs))) if num else ""])
    return ["method", *model_tags, "Num", "Max", "Mean"], rows


def overlap_table(results: Sequence[EvalResult],
                  cutoff: float = 0.55) -> tuple[list[str], list[list]]:
    methods = sorted({r.method for r in results})
    by_method = {m: outlier_set([r for r in results if r.method == m], cutoff=cutoff)
                 for m in methods}
    names, mat = overlap_matrix(by_method)
    rows = [[name, *(_fmt(v) for v in mat[i])] for i, name in enumerate(names)]
    return ["method", *names], rows


def threshold_boxplot_rows(results: Sequence[EvalResult], dim: str) -> list[dict]:
    groups: dict[tuple[str, str], list[float]] = {}
    for r in results:
        groups.setdefault((r.method, getattr(r, dim)), []).append(r.threshold)
    rows = []
    for (method, group), values in sorted(groups.items()):
        finite = [v for v in values if math.isfinite(v)]
        row = {"method": method, dim: group, "n": len(values),
               "n_nonfinite": len(values) - len(finite)}
        if finite:
            bp = boxplot_stats(finite)
            row["stats"] = {"q1": bp.q1, "median": bp.median, "q3": bp.q3,
                            "whisker_lo": bp.whisker_lo, "whisker_hi": bp.whisker_hi,
                            "outliers": list(bp.outliers)}
        rows.append(row)
    return rows


def spearman_table(results: Sequence[EvalResult]) -> tuple[list[str], list[list]]:
    """AUC vs text length / n-gram overlap correlations per method, split, domain."""
    corr_groups: dict[tuple[str, str, str], list[EvalResult]] = {}
    for r in results:
        corr_groups.setdefault((r.method, r.split_method, r.domain), []).append(r)
    rows = []
    for (method, split_method, domain), rs in sorted(corr_groups.items()):
        aucs = [r.auc for r in rs]
        row = [method, split_method, domain, len(rs)]
        for covariate in ("text_length_stat", "ngram_overlap_stat"):
            xs = [getattr(r, covariate) for r in rs]
            try:
                row.append(_fmt(spearman(aucs, xs)))
            except ValueError:
                row.append("")
        rows.append(row)
    return ["method", "split_method", "domain", "n",
            "spearman_text_length", "spearman_ngram_overlap"], rows


def hypothesis_tables(ks_rows: Mapping[str, dict], model_tags: Sequence[str]
                      ) -> dict[str, tuple[list[str], list[list]]]:
    """Per split method: fraction of splits whose score distributions differ."""
    by_split_method: dict[str, dict[tuple[str, str], list[bool]]] = {}
    for key_str, ks in ks_rows.items():
        key = RunKey.decode(key_str)
        sm = key.split_id.split("-", 1)[0]
        by_split_method.setdefault(sm, {}).setdefault(
            (key.method, key.model_tag), []).append(bool(ks["reject"]))
    tables = {}
    for sm, table in sorted(by_split_method.items()):
        rows = []
        for method in sorted({m for m, _ in table}):
            row = [method]
            for tag in model_tags:
                rejects = table.get((method, tag))
                row.append(_fmt(hypothesis_pass_rate(rejects)) if rejects else "")
            rows.append(row)
        tables[sm] = (["method", *model_tags], rows)
    return tables


def emit_reports(results: Sequence[EvalResult], out_dir: str | Path, *,
                 model_tags: Sequence[str] | None = None,
                 ks_rows: Mapping[str, dict] | None = None,
                 curves: Mapping[str, dict] | None = None,
                 outlier_cutoff: float = 0.55) -> Path:
    """Write the full report bundle; byte-identical for identical inputs."""
    if not results:
        raise ValueError("emit_reports requires at least one result")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(results, key=lambda r: (r.method, r.split_id, r.model_tag, r.seed))
    serialize_results(ordered, out_dir / "results.csv")

    tags = list(model_tags) if model_tags else sorted({r.model_tag for r in results})

    for dim in ("method", "domain", "model_tag", "split_method"):
        header, rows = density_table(ordered, dim)
        _write_csv(out_dir / f"density_by_{dim}.csv", header, rows)

    header, rows = outlier_table(ordered, tags, cutoff=outlier_cutoff)
    _write_csv(out_dir / "outliers.csv", header, rows)

    if len({r.method for r in ordered}) >= 2:
        header, rows = overlap_table(ordered, cutoff=outlier_cutoff)
        _write_csv(out_dir / "overlap_matrix.csv", header, rows)

    for dim, fname in (("domain", "thresholds_by_domain.jsonl"),
                       ("model_tag", "thresholds_by_model.jsonl")):
        _write_jsonl(out_dir / fname, threshold_boxplot_rows(ordered, dim))

    header, rows = spearman_table(ordered)
    _write_csv(out_dir / "spearman.csv", header, rows)

    if ks_rows:
        for sm, (header, rows) in hypothesis_tables(ks_rows, tags).items():
            _write_csv(out_dir / f"hypothesis_{sm}.csv", header, rows)

    if curves:
        rows = []
        for triple, payload in sorted(curves.items()):
            split_id, model_tag, seed = triple.split("|")
            rows.append({"split_id": split_id, "model_tag": model_tag,
                         "seed": int(seed), **payload})
        _write_jsonl(out_dir / "entropy_curves.jsonl", rows)

    return out_dir


def write_ks_csv(ks_rows: Mapping[str, dict], path: Path) -> None:
    rows = []
    for key_str in sorted(ks_rows):
        key = RunKey.decode(key_str)
        ks = ks_rows[key_str]
        rows.append([key.method, key.split_id, key.model_tag, key.seed,
                     _fmt(ks["statistic"]), _fmt(ks["p_value"]), int(ks["reject"])])
    _write_csv(path, ["method", "split_id", "model_tag", "seed",
                      "statistic", "p_value", "reject"], rows)


def read_ks_csv(path: Path) -> dict[str, dict]:
    ks_rows = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            key = RunKey(method=rec["method"], split_id=rec["split_id"],
                         model_tag=rec["model_tag"], seed=int(rec["seed"]))
            ks_rows[key.encode()] = {"statistic": float(rec["statistic"]),
                                     "p_value": float(rec["p_value"]),
                                     "reject": bool(int(rec["reject"]))}
    return ks_rows


def run_experiment(cfg: ExperimentConfig,
                   on_key_done: Callable[[RunKey, str], None] | None = None
                   ) -> ExecuteOutcome:
    """Full pipeline: splits, plan, execute, reports."""
    inventory = prepare_splits(cfg)
    keys = plan_matrix(cfg, inventory)
    logger.info("planned %d run keys (%d split rejections)",
                len(keys), len(inventory.rejections))
    outcome = execute(cfg, keys, inventory, on_key_done=on_key_done)
    report_dir = cfg.output_dir / REPORT_DIR
    if outcome.results:
        emit_reports(outcome.results, report_dir, model_tags=cfg.model_tags,
                     ks_rows=outcome.ks_rows, curves=outcome.curves)
        write_ks_csv(outcome.ks_rows, report_dir / "ks.csv")
    return outcome
