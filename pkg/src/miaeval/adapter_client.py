"""Thin HTTP client for a model adapter service.

The adapter exposes POST /trace, /trace_conditioned, /generate, /gradient,
/hidden_states, /similarity and GET /meta with JSON bodies; this client maps
those responses onto the wire record types.
"""

from __future__ import annotations

import threading
from typing import Sequence

import requests

from .records import GenerationRecord, LayerEmbedding, TokenTrace

DEFAULT_TIMEOUT = 300.0
DEFAULT_MAX_IN_FLIGHT = 4


class AdapterError(RuntimeError):
    """The adapter returned an error or an unusable payload."""


class AdapterClient:
    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT,
                 max_in_flight: int = DEFAULT_MAX_IN_FLIGHT):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._session = requests.Session()
        self._in_flight = threading.Semaphore(max_in_flight)

    def _post(self, route: str, payload: dict) -> dict:
        with self._in_flight:
            try:
                resp = self._session.post(f"{self.endpoint}{route}", json=payload,
                                          timeout=self.timeout)
            except requests.RequestException as exc:
                raise AdapterError(f"{route}: {exc}") from exc
        if resp.status_code != 200:
            raise AdapterError(f"{route}: HTTP {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def meta(self) -> dict:
        try:
            resp = self._session.get(f"{self.endpoint}/meta", timeout=self.timeout)
        except requests.RequestException as exc:
            raise AdapterError(f"/meta: {exc}") from exc
        if resp.status_code != 200:
            raise AdapterError(f"/meta: HTTP {resp.status_code}")
        return resp.json()

    def _trace_from(self, example_id: str, body: dict) -> TokenTrace:
        return TokenTrace(
            example_id=example_id,
            logprob_target=tuple(body["logprob_target"]),
            mu_logprob=tuple(body["mu_logprob"]),
            sigma_logprob=tuple(body["sigma_logprob"]),
            entropy=tuple(body["entropy"]),
            loss=float(body["loss"]),
            ref_loss=None if body.get("ref_loss") is None else float(body["ref_loss"]),
            gradient_norm=(None if body.get("gradient_norm") is None
                           else float(body["gradient_norm"])),
        )

    def trace(self, example_id: str, tokens: Sequence[int]) -> TokenTrace:
        body = self._post("/trace", {"tokens": list(tokens)})
        return self._trace_from(example_id, body)

    def trace_conditioned(self, example_id: str, tokens: Sequence[int],
                          num_shots: int = 12, max_length: int = 1000) -> TokenTrace:
        body = self._post("/trace_conditioned", {
            "tokens": list(tokens), "num_shots": num_shots, "max_length": max_length})
        return self._trace_from(example_id, body)

    def gradient_norm(self, tokens: Sequence[int]) -> float:
        body = self._post("/gradient", {"tokens": list(tokens)})
        return float(body["gradient_norm"])

    def generate(self, example_id: str, prefix_tokens: Sequence[int],
                 reference_continuation: Sequence[int], n: int, temperature: float,
                 max_new_tokens: int, seed: int,
                 include_greedy: bool = True) -> GenerationRecord:
        body = self._post("/generate", {
            "prefix_tokens": list(prefix_tokens), "n": n, "temperature": temperature,
            "max_new_tokens": max_new_tokens, "include_greedy": include_greedy,
            "seed": seed})
        return GenerationRecord(
            example_id=example_id,
            prefix_tokens=tuple(prefix_tokens),
            reference_continuation=tuple(reference_continuation),
            sampled_continuations=tuple(tuple(s) for s in body["sampled_continuations"]),
            greedy_continuation=tuple(body.get("greedy_continuation", ())),
            temperature=temperature,
            n_samples=int(body["n_samples"]),
        )

    def hidden_states(self, example_id: str, tokens: Sequence[int]) -> list[LayerEmbedding]:
        body = self._post("/hidden_states", {"tokens": list(tokens)})
        return [LayerEmbedding(example_id=example_id, layer_index=i, vector=tuple(vec))
                for i, vec in enumerate(body["layers"])]
