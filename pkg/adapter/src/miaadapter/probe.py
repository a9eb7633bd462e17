"""Transformer probe: binary member/nonmember classifier over pooled embeddings."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class ProbeConfig:
    hidden_dim: int = 256
    layers: int = 4
    heads: int = 8
    epochs: int = 4
    batch_size: int = 32
    learning_rate: float = 1e-3
    train_fraction: float = 0.8
    seed: int = 0


class EmbeddingProbe(nn.Module):
    """Projects a pooled embedding to a one-token sequence for a transformer encoder."""

    def __init__(self, input_dim: int, config: ProbeConfig):
        super().__init__()
        self.config = config
        self.project = nn.Linear(input_dim, config.hidden_dim)
        layer = nn.TransformerEncoderLayer(
            d_model=config.hidden_dim, nhead=config.heads,
            dim_feedforward=4 * config.hidden_dim, batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, num_layers=config.layers)
        self.classify = nn.Linear(config.hidden_dim, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.project(x).unsqueeze(1)
        h = self.encoder(h)
        return self.classify(h[:, 0])


def train_probe(vectors, labels, config: ProbeConfig = ProbeConfig()
                ) -> tuple[float, EmbeddingProbe, dict]:
    """Train per config on a seeded stratified 4:1 split; returns val accuracy.

    ``labels`` are 0/1 ints (1 = member).  Raises on single-class input.
    """
    x = torch.as_tensor(np.asarray(vectors, dtype=np.float32))
    y = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("vectors must be (n, d) with one label per row")
    classes = set(y.tolist())
    if classes != {0, 1}:
        raise ValueError(f"need both classes present, got labels {sorted(classes)}")

    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(y.numpy() == cls)
        perm = rng.permutation(idx.size)
        n_train = min(max(int(math.floor(config.train_fraction * idx.size)), 1),
                      idx.size - 1)
        train_idx.extend(idx[perm[:n_train]])
        val_idx.extend(idx[perm[n_train:]])
    train_idx = np.asarray(sorted(train_idx))
    val_idx = np.asarray(sorted(val_idx))

    torch.manual_seed(config.seed)
    probe = EmbeddingProbe(x.shape[1], config)
    optimizer = torch.optim.Adam(probe.parameters(), lr=config.learning_rate)
    loss_fn = nn.CrossEntropyLoss()

    order_rng = np.random.default_rng(config.seed + 1)
    probe.train()
    for _ in range(config.epochs):
        order = order_rng.permutation(train_idx.size)
        for start in range(0, train_idx.size, config.batch_size):
            batch = train_idx[order[start:start + config.batch_size]]
            optimizer.zero_grad()
            logits = probe(x[batch])
            loss = loss_fn(logits, y[batch])
            loss.backward()
            optimizer.step()

    probe.eval()
    with torch.no_grad():
        predictions = probe(x[val_idx]).argmax(dim=1)
        accuracy = float((predictions == y[val_idx]).double().mean())
    metadata = {
        "config": asdict(config),
        "n_train": int(train_idx.size),
        "n_val": int(val_idx.size),
        "input_dim": int(x.shape[1]),
        "val_accuracy": accuracy,
    }
    return accuracy, probe, metadata
