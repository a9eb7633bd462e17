"""Byte-level tokenization: ids 0..255 are UTF-8 bytes, 256 is the BOS marker.

Self-contained so the adapter runs fully offline; every token sequence the
adapter emits starts with BOS, which gives the first real byte a conditional
log-probability.
"""

from __future__ import annotations

from typing import Sequence

BOS_ID = 256
VOCAB_SIZE = 257


def encode(text: str, add_bos: bool = True) -> list[int]:
    ids = list(text.encode("utf-8"))
    return [BOS_ID] + ids if add_bos else ids


def decode(tokens: Sequence[int]) -> str:
    data = bytes(t for t in tokens if 0 <= t < 256)
    return data.decode("utf-8", errors="replace")
