"""Adapter CLI: init-model, serve, dump."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .dump import dump_corpus
from .model import DEFAULT_INIT_SEED, MODEL_ID, build_model, load_model, save_model
from .service import ModelService, lexical_similarity


def _load_shots(path: str | None) -> list[str]:
    if not path:
        return []
    shots = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            shots.append(row["text"] if isinstance(row, dict) else str(row))
    return shots


def _make_service(model_path, ref_model_path, shots_path, similarity) -> ModelService:
    model = load_model(model_path) if model_path else build_model()
    reference = load_model(ref_model_path) if ref_model_path else None
    sim = lexical_similarity if similarity == "lexical" else None
    return ModelService(model, reference_model=reference,
                        model_id=MODEL_ID if not model_path else f"{MODEL_ID}@{model_path}",
                        recall_shots=_load_shots(shots_path), similarity=sim)


@click.group()
def main():
    """Model adapter: traces, generations, gradients, embeddings."""


@main.command("init-model")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=DEFAULT_INIT_SEED, show_default=True)
def init_model(out_path, seed):
    """Save a deterministic random initialization of the built-in model."""
    model = build_model(seed)
    save_model(model, out_path)
    click.echo(f"wrote {out_path}")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8234, show_default=True)
@click.option("--model-path", type=click.Path(exists=True), default=None,
              help="Checkpoint; defaults to the built-in random initialization.")
@click.option("--ref-model-path", type=click.Path(exists=True), default=None)
@click.option("--shots", "shots_path", type=click.Path(exists=True), default=None,
              help="JSONL of non-member texts for conditioned traces.")
@click.option("--similarity", type=click.Choice(["none", "lexical"]), default="none",
              show_default=True)
@click.option("--artifact-dir", type=click.Path(), default=None)
def serve(host, port, model_path, ref_model_path, shots_path, similarity, artifact_dir):
    """Run the HTTP service."""
    import uvicorn

    from .server import create_app

    service = _make_service(model_path, ref_model_path, shots_path, similarity)
    app = create_app(service, artifact_dir=artifact_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("dump")
@click.option("--corpus", "corpus_paths", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--model-path", type=click.Path(exists=True), default=None)
@click.option("--ref-model-path", type=click.Path(exists=True), default=None)
@click.option("--shots", "shots_path", type=click.Path(exists=True), default=None)
@click.option("--traces/--no-traces", default=True, show_default=True)
@click.option("--conditioned", is_flag=True, help="Also dump prefix-conditioned traces.")
@click.option("--perturbed", is_flag=True, help="Also dump token-swap perturbed traces.")
@click.option("--generations", is_flag=True)
@click.option("--embeddings", is_flag=True)
@click.option("--gradients", is_flag=True, help="Fill gradient_norm in traces.")
@click.option("--n-samples", type=int, default=10, show_default=True)
@click.option("--temperature", type=float, default=0.8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def dump(corpus_paths, out_dir, model_path, ref_model_path, shots_path, traces,
         conditioned, perturbed, generations, embeddings, gradients, n_samples,
         temperature, seed):
    """Dump JSONL records for every example of one or more corpora."""
    service = _make_service(model_path, ref_model_path, shots_path, "none")
    counts = dump_corpus(service, list(corpus_paths), out_dir, traces=traces,
                         conditioned=conditioned, perturbed=perturbed,
                         generations=generations, embeddings=embeddings,
                         gradients=gradients, n_samples=n_samples,
                         temperature=temperature, seed=seed)
    click.echo(json.dumps(counts, sort_keys=True))


if __name__ == "__main__":
    main()
