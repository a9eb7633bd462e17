"""Built-in causal language model: a small byte-level GPT-2.

Pretrained weights are not assumed to be downloadable, so the default model
is a deterministic random initialization of a public architecture; training
against a corpus happens outside the service (test fixtures, user scripts).
A checkpoint path can point at any compatible saved state dict.
"""

from __future__ import annotations

from pathlib import Path

import torch
from transformers import GPT2Config, GPT2LMHeadModel
from transformers.utils import logging as hf_logging

from .tokenizer import BOS_ID, VOCAB_SIZE

hf_logging.set_verbosity_error()

MODEL_ID = "bytelm-gpt2-2x128"
CONTEXT_LENGTH = 1024
DEFAULT_INIT_SEED = 1234


def model_config() -> GPT2Config:
    return GPT2Config(
        vocab_size=VOCAB_SIZE,
        n_positions=CONTEXT_LENGTH,
        n_embd=128,
        n_layer=2,
        n_head=4,
        bos_token_id=BOS_ID,
        eos_token_id=BOS_ID,
    )


def build_model(seed: int = DEFAULT_INIT_SEED) -> GPT2LMHeadModel:
    torch.manual_seed(seed)
    model = GPT2LMHeadModel(model_config())
    model.eval()
    return model


def save_model(model: GPT2LMHeadModel, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)


def load_model(path: str | Path) -> GPT2LMHeadModel:
    model = GPT2LMHeadModel(model_config())
    state = torch.load(path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model


def model_meta(model: GPT2LMHeadModel, model_id: str = MODEL_ID) -> dict:
    return {
        "model_id": model_id,
        "vocab_size": model.config.vocab_size,
        "context_length": model.config.n_positions,
        "n_layers": model.config.n_layer,
        "n_params": sum(p.numel() for p in model.parameters()),
    }
