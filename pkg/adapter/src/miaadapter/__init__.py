"""Model adapter: token traces, generations, gradients, embeddings, probes."""

from .model import MODEL_ID, build_model, load_model, model_meta, save_model
from .probe import EmbeddingProbe, ProbeConfig, train_probe
from .service import ModelService, ServiceError, lexical_similarity
from .tokenizer import BOS_ID, VOCAB_SIZE, decode, encode

__version__ = "0.1.0"
