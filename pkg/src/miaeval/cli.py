"""Command-line interface.

Verbs: split, score, eval (auc/threshold/outliers/overlap/density/correlate/
hypothesis/jsdiv), probe (db/entropy/memorize), validate, run, report.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import features, probes, records, splits, stats
from .config import load_config
from .runner import (REPORT_DIR, RunAborted, density_table, emit_reports,
                     hypothesis_tables, outlier_table, overlap_table,
                     read_ks_csv, run_experiment, spearman_table, write_ks_csv,
                     _write_csv, _write_jsonl)

logger = logging.getLogger("miaeval")


def _echo_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable info-level logging.")
def main(verbose: bool):
    """Membership-inference evaluation toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

@main.command("split")
@click.option("--method", type=click.Choice(splits.SPLIT_METHODS), required=True)
@click.option("--domain", required=True)
@click.option("--lo", type=int, default=None, help="Length range start (truncate/complete).")
@click.option("--hi", type=int, default=None, help="Length range end (truncate/complete).")
@click.option("--seed", type=int, required=True)
@click.option("--min", "min_examples", type=int, default=splits.DEFAULT_MIN_EXAMPLES,
              show_default=True)
@click.option("--members", "members_path", required=True, type=click.Path(exists=True))
@click.option("--nonmembers", "nonmembers_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def split_cmd(method, domain, lo, hi, seed, min_examples, members_path,
              nonmembers_path, out_dir):
    """Build one member/nonmember split (ten bins for the relative method)."""
    members = records.ingest_corpus(members_path, records.MEMBER)
    nonmembers = records.ingest_corpus(nonmembers_path, records.NONMEMBER)
    if method == splits.RELATIVE:
        outcomes = splits.build_relative_split(members, nonmembers, domain, seed,
                                               min_examples)
        rejected = 0
        for outcome in outcomes:
            if isinstance(outcome, splits.SplitRejection):
                rejected += 1
                click.echo(f"rejected {outcome.split_id} seed {seed}: {outcome.reason}")
            else:
                path = splits.save_split_set(outcome, Path(out_dir) / outcome.spec.split_id)
                click.echo(f"wrote {path}")
        sys.exit(1 if rejected == len(outcomes) else 0)
    if lo is None or hi is None:
        raise click.UsageError("--lo and --hi are required for truncate/complete splits")
    spec = splits.SplitSpec(method=method, domain=domain, length_lo=lo, length_hi=hi,
                            seed=seed, min_examples=min_examples)
    builder = (splits.build_truncate_split if method == splits.TRUNCATE
               else splits.build_complete_split)
    outcome = builder(members, nonmembers, spec)
    if isinstance(outcome, splits.SplitRejection):
        click.echo(f"rejected {outcome.split_id}: {outcome.reason}")
        sys.exit(1)
    path = splits.save_split_set(outcome, out_dir)
    click.echo(f"wrote {path}")


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------

@main.command("score")
@click.option("--method", type=click.Choice(features.METHODS), required=True)
@click.option("--split", "split_dir", required=True, type=click.Path(exists=True))
@click.option("--traces", type=click.Path(exists=True), default=None)
@click.option("--conditioned-traces", type=click.Path(exists=True), default=None)
@click.option("--perturbed-traces", type=click.Path(exists=True), default=None)
@click.option("--generations", type=click.Path(exists=True), default=None)
@click.option("--freq", type=click.Path(exists=True), default=None,
              help="Token frequency table JSONL.")
@click.option("--examples", "examples_path", type=click.Path(exists=True), default=None,
              help="Retokenized examples JSONL supplying texts for zlib.")
@click.option("--k-percent", type=float, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def score_cmd(method, split_dir, traces, conditioned_traces, perturbed_traces,
              generations, freq, examples_path, k_percent, out_path):
    """Score every example of a split with one method; writes FeatureScore JSONL."""
    split = splits.load_split_set(split_dir)
    overrides = {} if k_percent is None else {"k_percent": k_percent}
    inputs = features.ScoringInputs(config=features.config_for(method, overrides))
    if traces:
        inputs.traces = {t.example_id: t for t in records.read_traces(traces)}
    if conditioned_traces:
        inputs.conditioned_traces = {t.example_id: t
                                     for t in records.read_traces(conditioned_traces)}
    if perturbed_traces:
        grouped: dict[str, list] = {}
        for t in records.read_traces(perturbed_traces):
            grouped.setdefault(t.example_id, []).append(t)
        inputs.perturbed_traces = grouped
    if generations:
        inputs.generations = {g.example_id: g for g in records.read_generations(generations)}
    if freq:
        inputs.frequency_table = records.read_frequency_table(freq)
    if examples_path:
        inputs.texts = {str(row["example_id"]): str(row["text"])
                        for _, row in records._iter_jsonl(examples_path)}
    member_scores, nonmember_scores = features.score_split(
        split.members, split.nonmembers, method, inputs)
    features.write_scores(member_scores + nonmember_scores, out_path)
    click.echo(f"wrote {len(member_scores) + len(nonmember_scores)} scores to {out_path}")


def _scores_by_class(scores_path: str, split_dir: str) -> tuple[list[float], list[float]]:
    split = splits.load_split_set(split_dir)
    by_id = {s.example_id: s.value for s in features.read_scores(scores_path)}
    missing = [ex.example_id for ex in (*split.members, *split.nonmembers)
               if ex.example_id not in by_id]
    if missing:
        raise click.ClickException(f"scores missing for {len(missing)} example(s), "
                                   f"e.g. {missing[:3]}")
    return ([by_id[ex.example_id] for ex in split.members],
            [by_id[ex.example_id] for ex in split.nonmembers])


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

@main.group("eval")
def eval_group():
    """Statistical evaluation over scores and result tables."""


@eval_group.command("auc")
@click.option("--scores", required=True, type=click.Path(exists=True))
@click.option("--split", "split_dir", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path())
def eval_auc(scores, split_dir, out):
    """ROC-AUC of member vs nonmember scores."""
    m_vals, n_vals = _scores_by_class(scores, split_dir)
    auc = stats.roc_auc(m_vals, n_vals)
    _echo_json({"auc": auc, "n_member": len(m_vals), "n_nonmember": len(n_vals)}, out)


@eval_group.command("threshold")
@click.option("--scores", required=True, type=click.Path(exists=True))
@click.option("--split", "split_dir", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--train-fraction", type=float, default=0.8, show_default=True)
@click.option("--out", default=None, type=click.Path())
def eval_threshold(scores, split_dir, seed, train_fraction, out):
    """Geometric-mean threshold with held-out TPR/FPR."""
    m_vals, n_vals = _scores_by_class(scores, split_dir)
    t, tpr, fpr = stats.select_threshold(m_vals, n_vals, train_fraction=train_fraction,
                                         seed=seed)
    _echo_json({"threshold": t if abs(t) != float("inf") else str(t),
                "val_tpr": tpr, "val_fpr": fpr}, out)


@eval_group.command("outliers")
@click.option("--results", required=True, type=click.Path(exists=True))
@click.option("--cutoff", type=float, default=0.55, show_default=True)
@click.option("--out", required=True, type=click.Path())
def eval_outliers(results, cutoff, out):
    """Outlier-count table (per method x model tag, Num/Max/Mean)."""
    rows = records.read_results(results)
    tags = sorted({r.model_tag for r in rows})
    header, table = outlier_table(rows, tags, cutoff=cutoff)
    _write_csv(Path(out), header, table)
    click.echo(f"wrote {out}")


@eval_group.command("overlap")
@click.option("--results", required=True, type=click.Path(exists=True))
@click.option("--cutoff", type=float, default=0.55, show_default=True)
@click.option("--out", required=True, type=click.Path())
def eval_overlap(results, cutoff, out):
    """Jaccard overlap matrix of outlier splits across methods."""
    rows = records.read_results(results)
    header, table = overlap_table(rows, cutoff=cutoff)
    _write_csv(Path(out), header, table)
    click.echo(f"wrote {out}")


@eval_group.command("density")
@click.option("--results", required=True, type=click.Path(exists=True))
@click.option("--by", "dim", type=click.Choice(["method", "domain", "model_tag",
                                                "split_method", "seed"]),
              default="method", show_default=True)
@click.option("--out", required=True, type=click.Path())
def eval_density(results, dim, out):
    """AUC histogram density over [0.50, 0.58) per group."""
    rows = records.read_results(results)
    header, table = density_table(rows, dim)
    _write_csv(Path(out), header, table)
    click.echo(f"wrote {out}")


@eval_group.command("correlate")
@click.option("--results", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def eval_correlate(results, out):
    """Spearman correlation of AUC with text length and n-gram overlap."""
    rows = records.read_results(results)
    header, table = spearman_table(rows)
    _write_csv(Path(out), header, table)
    click.echo(f"wrote {out}")


@eval_group.command("hypothesis")
@click.option("--ks", "ks_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def eval_hypothesis(ks_path, out_dir):
    """Hypothesis-test pass-rate tables per split method."""
    ks_rows = read_ks_csv(Path(ks_path))
    tags = sorted({key.split("|")[2] for key in ks_rows})
    for sm, (header, rows) in hypothesis_tables(ks_rows, tags).items():
        path = Path(out_dir) / f"hypothesis_{sm}.csv"
        _write_csv(path, header, rows)
        click.echo(f"wrote {path}")


@eval_group.command("jsdiv")
@click.option("--hist-a", required=True, type=click.Path(exists=True),
              help="JSON array of normalized bin masses.")
@click.option("--hist-b", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path())
def eval_jsdiv(hist_a, hist_b, out):
    """Jensen-Shannon divergence between two normalized histograms."""
    a = json.loads(Path(hist_a).read_text(encoding="utf-8"))
    b = json.loads(Path(hist_b).read_text(encoding="utf-8"))
    _echo_json({"js_divergence": stats.js_divergence(a, b)}, out)


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------

@main.group("probe")
def probe_group():
    """Embedding and decoding-dynamics analyses."""


@probe_group.command("db")
@click.option("--embeddings", required=True, type=click.Path(exists=True))
@click.option("--split", "split_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def probe_db(embeddings, split_dir, out):
    """Per-layer Davies-Bouldin separability profile."""
    split = splits.load_split_set(split_dir)
    labels = {ex.example_id: ex.label for ex in (*split.members, *split.nonmembers)}
    profile = probes.layer_separability_profile(records.read_embeddings(embeddings), labels)
    _write_jsonl(Path(out), [{"layer": layer, "db_index": value}
                             for layer, value in profile])
    click.echo(f"wrote {out}")


@probe_group.command("entropy")
@click.option("--traces", required=True, type=click.Path(exists=True))
@click.option("--split", "split_dir", required=True, type=click.Path(exists=True))
@click.option("--max-step", type=int, default=probes.DEFAULT_ENTROPY_STEPS,
              show_default=True)
@click.option("--out", default=None, type=click.Path())
def probe_entropy(traces, split_dir, max_step, out):
    """Per-step class-mean entropies and accumulated difference."""
    split = splits.load_split_set(split_dir)
    by_id = {t.example_id: t for t in records.read_traces(traces)}
    missing = [ex.example_id for ex in (*split.members, *split.nonmembers)
               if ex.example_id not in by_id]
    if missing:
        raise click.ClickException(f"traces missing for {len(missing)} example(s)")
    curves = probes.entropy_curves(
        [by_id[ex.example_id] for ex in split.members],
        [by_id[ex.example_id] for ex in split.nonmembers], max_step=max_step)
    _echo_json({"max_step": curves.max_step,
                "mean_member": list(curves.mean_member),
                "mean_nonmember": list(curves.mean_nonmember),
                "accumulated_diff": list(curves.accumulated_diff),
                "n_member": curves.n_member, "n_nonmember": curves.n_nonmember,
                "n_excluded_member": curves.n_excluded_member,
                "n_excluded_nonmember": curves.n_excluded_nonmember}, out)


@probe_group.command("memorize")
@click.option("--generations", required=True, type=click.Path(exists=True))
@click.option("--k", type=int, default=32, show_default=True)
@click.option("--out", required=True, type=click.Path())
def probe_memorize(generations, k, out):
    """Greedy-vs-reference memorization score per generation record."""
    rows = [{"example_id": g.example_id,
             "memorization_score": probes.memorization_score(g, k=k)}
            for g in records.read_generations(generations)]
    _write_jsonl(Path(out), rows)
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# validate / run / report
# ---------------------------------------------------------------------------

@main.command("validate")
@click.option("--traces", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help="Examples JSONL providing the token sequences.")
@click.option("--vocab-size", type=int, default=None)
def validate_cmd(traces, corpus, vocab_size):
    """Check every trace against its example; exit 1 on any violation."""
    tokens_by_id = {}
    for _, row in records._iter_jsonl(corpus):
        tokens_by_id[str(row["example_id"])] = list(row["tokens"])
    violations = 0
    checked = 0
    for trace in records.read_traces(traces):
        if trace.example_id not in tokens_by_id:
            click.echo(f"{trace.example_id}: no matching example in corpus")
            violations += 1
            continue
        report = records.validate_trace(trace, tokens_by_id[trace.example_id],
                                        vocab_size=vocab_size)
        checked += 1
        for msg in report:
            click.echo(f"{trace.example_id}: {msg}")
            violations += 1
    click.echo(f"checked {checked} traces, {violations} violation(s)")
    sys.exit(1 if violations else 0)


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def run_cmd(config_path):
    """Execute the full method x split x model x seed matrix from a config."""
    cfg = load_config(config_path)
    try:
        outcome = run_experiment(cfg)
    except RunAborted as exc:
        click.echo(f"aborted: {exc}", err=True)
        sys.exit(2)
    click.echo(f"completed {len(outcome.results)} keys "
               f"({outcome.cached} cached, {len(outcome.failed)} failed)")
    for key, err in sorted(outcome.failed.items()):
        click.echo(f"failed {key}: {err}", err=True)
    click.echo(f"reports in {cfg.output_dir / REPORT_DIR}")


@main.command("report")
@click.option("--results", required=True, type=click.Path(exists=True))
@click.option("--ks", "ks_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
def report_cmd(results, ks_path, out_dir):
    """Regenerate the report bundle from a results CSV (and optional KS CSV)."""
    rows = records.read_results(results)
    ks_rows = read_ks_csv(Path(ks_path)) if ks_path else None
    emit_reports(rows, out_dir, ks_rows=ks_rows)
    if ks_rows:
        write_ks_csv(ks_rows, Path(out_dir) / "ks.csv")
    click.echo(f"wrote reports to {out_dir}")


if __name__ == "__main__":
    main()
