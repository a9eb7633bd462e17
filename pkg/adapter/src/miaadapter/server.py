"""HTTP surface: JSON endpoints mirroring the service operations."""

from __future__ import annotations

import tempfile
from pathlib import Path

import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .probe import ProbeConfig, train_probe
from .service import ModelService, ServiceError


class TraceRequest(BaseModel):
    tokens: list[int] | None = None
    text: str | None = None


class ConditionedTraceRequest(TraceRequest):
    num_shots: int = 12
    max_length: int = 1000


class GenerateRequest(BaseModel):
    prefix_tokens: list[int] | None = None
    prefix_text: str | None = None
    n: int = 10
    temperature: float = 0.8
    max_new_tokens: int = 64
    include_greedy: bool = True
    seed: int = 0


class SimilarityRequest(BaseModel):
    a: list[int]
    b: list[int]


class ProbeTrainRequest(BaseModel):
    vectors: list[list[float]]
    labels: list[int]
    hidden_dim: int = 256
    layers: int = 4
    heads: int = 8
    epochs: int = 4
    batch_size: int = 32
    learning_rate: float = 1e-3
    train_fraction: float = 0.8
    seed: int = 0


class TokenizeRequest(BaseModel):
    text: str = Field(min_length=0)


def create_app(service: ModelService, artifact_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="mia-adapter", version="0.1.0")
    artifacts = Path(artifact_dir) if artifact_dir else Path(tempfile.mkdtemp(prefix="probe-"))
    artifacts.mkdir(parents=True, exist_ok=True)
    counter = {"probe": 0}

    def run(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ServiceError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/meta")
    def meta():
        return service.meta()

    @app.post("/tokenize")
    def tokenize(req: TokenizeRequest):
        return {"tokens": service.tokenize(req.text)}

    @app.post("/trace")
    def trace(req: TraceRequest):
        return run(service.trace, tokens=req.tokens, text=req.text)

    @app.post("/trace_conditioned")
    def trace_conditioned(req: ConditionedTraceRequest):
        return run(service.trace_conditioned, tokens=req.tokens, text=req.text,
                   num_shots=req.num_shots, max_length=req.max_length)

    @app.post("/generate")
    def generate(req: GenerateRequest):
        prefix = req.prefix_tokens
        if prefix is None and req.prefix_text is not None:
            prefix = service.tokenize(req.prefix_text)
        if prefix is None:
            raise HTTPException(status_code=400, detail="prefix_tokens or prefix_text required")
        return run(service.generate, prefix, req.n, req.temperature,
                   req.max_new_tokens, req.include_greedy, req.seed)

    @app.post("/gradient")
    def gradient(req: TraceRequest):
        return {"gradient_norm": run(service.gradient_norm, tokens=req.tokens,
                                     text=req.text)}

    @app.post("/hidden_states")
    def hidden_states(req: TraceRequest):
        return {"layers": run(service.hidden_states, tokens=req.tokens, text=req.text)}

    @app.post("/similarity")
    def similarity(req: SimilarityRequest):
        if service.similarity_fn is None:
            raise HTTPException(status_code=501, detail="similarity model not configured")
        return {"similarity": run(service.similarity, req.a, req.b)}

    @app.post("/probe_train")
    def probe_train(req: ProbeTrainRequest):
        config = ProbeConfig(hidden_dim=req.hidden_dim, layers=req.layers,
                             heads=req.heads, epochs=req.epochs,
                             batch_size=req.batch_size,
                             learning_rate=req.learning_rate,
                             train_fraction=req.train_fraction, seed=req.seed)
        try:
            accuracy, probe, metadata = train_probe(req.vectors, req.labels, config)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        counter["probe"] += 1
        artifact = artifacts / f"probe_{counter['probe']:03d}.pt"
        torch.save({"state_dict": probe.state_dict(), "metadata": metadata}, artifact)
        return {"val_accuracy": accuracy, "artifact": str(artifact), **metadata}

    return app
