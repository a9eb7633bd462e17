"""Model service: traces, conditioned traces, generations, gradients, embeddings.

All numeric trace quantities are computed from a float64 softmax so that the
distribution moments agree with a brute-force recomputation to well under
1e-4.  Requests are serialized with a lock: sampling is seeded and the
service must stay deterministic under concurrent clients.
"""

from __future__ import annotations

import math
import threading
from collections import Counter
from typing import Callable, Sequence

import torch

from .model import MODEL_ID, model_meta
from .tokenizer import BOS_ID, decode, encode

SimilarityFn = Callable[[Sequence[int], Sequence[int]], float]
SHOT_SEPARATOR = 10  # newline byte between few-shot prefix texts


class ServiceError(ValueError):
    """Invalid request payload (bad tokens, context overflow, ...)."""


def global_grad_norm(parameters) -> float:
    """L2 norm of the concatenated gradients of all parameters that have one."""
    total = 0.0
    for p in parameters:
        if p.grad is not None:
            total += float(p.grad.double().pow(2).sum())
    return math.sqrt(total)


def lexical_similarity(a: Sequence[int], b: Sequence[int]) -> float:
    """Multiset token F1 in [0, 1]; the built-in similarity plug-in."""
    if not a or not b:
        return 0.0
    overlap = sum((Counter(a) & Counter(b)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(a)
    recall = overlap / len(b)
    return 2 * precision * recall / (precision + recall)


class ModelService:
    def __init__(self, model, reference_model=None, model_id: str = MODEL_ID,
                 recall_shots: Sequence[str] = (), similarity: SimilarityFn | None = None):
        self.model = model.eval()
        self.reference_model = reference_model.eval() if reference_model is not None else None
        self.model_id = model_id
        self.similarity_fn = similarity
        self._shots: list[list[int]] = [encode(text, add_bos=False) + [SHOT_SEPARATOR]
                                        for text in recall_shots]
        self._lock = threading.Lock()

    # -- helpers ----------------------------------------------------------

    def meta(self) -> dict:
        info = model_meta(self.model, self.model_id)
        info["has_reference_model"] = self.reference_model is not None
        info["num_recall_shots"] = len(self._shots)
        info["similarity_available"] = self.similarity_fn is not None
        return info

    def _check_tokens(self, tokens: Sequence[int], minimum: int = 2) -> list[int]:
        toks = [int(t) for t in tokens]
        if len(toks) < minimum:
            raise ServiceError(f"need at least {minimum} tokens, got {len(toks)}")
        vocab = self.model.config.vocab_size
        if any(t < 0 or t >= vocab for t in toks):
            raise ServiceError("token id outside the model vocabulary")
        if len(toks) > self.model.config.n_positions:
            raise ServiceError(f"{len(toks)} tokens exceed the context length "
                               f"{self.model.config.n_positions}")
        return toks

    @staticmethod
    def _resolve_tokens(tokens: Sequence[int] | None, text: str | None) -> list[int]:
        if tokens is not None:
            return [int(t) for t in tokens]
        if text is not None:
            return encode(text)
        raise ServiceError("request needs either tokens or text")

    def tokenize(self, text: str) -> list[int]:
        return encode(text)

    # -- traces -----------------------------------------------------------

    @torch.no_grad()
    def _step_stats(self, model, ids: list[int], target_from: int) -> dict:
        """Float64 per-step stats for targets ids[target_from:]."""
        input_ids = torch.tensor([ids], dtype=torch.long)
        logits = model(input_ids).logits[0].double()
        # position i predicts ids[i + 1]
        rows = logits[target_from - 1: len(ids) - 1]
        logprobs = torch.log_softmax(rows, dim=-1)
        probs = logprobs.exp()
        targets = torch.tensor(ids[target_from:], dtype=torch.long)
        lp_target = logprobs.gather(1, targets.unsqueeze(1)).squeeze(1)
        mu = (probs * logprobs).sum(dim=-1)
        var = (probs * (logprobs - mu.unsqueeze(1)) ** 2).sum(dim=-1)
        sigma = var.clamp(min=0.0).sqrt()
        entropy = -mu
        return {
            "logprob_target": lp_target.tolist(),
            "mu_logprob": mu.tolist(),
            "sigma_logprob": sigma.tolist(),
            "entropy": entropy.tolist(),
            "loss": float(-lp_target.mean()),
        }

    def trace(self, tokens: Sequence[int] | None = None, text: str | None = None) -> dict:
        with self._lock:
            ids = self._check_tokens(self._resolve_tokens(tokens, text))
            out = self._step_stats(self.model, ids, target_from=1)
            out["ref_loss"] = None
            out["gradient_norm"] = None
            if self.reference_model is not None:
                ref = self._step_stats(self.reference_model, ids, target_from=1)
                out["ref_loss"] = ref["loss"]
            return out

    def trace_conditioned(self, tokens: Sequence[int] | None = None,
                          text: str | None = None, num_shots: int = 12,
                          max_length: int = 1000) -> dict:
        """Trace of the same target span with a non-member few-shot prefix.

        Shots are dropped from the front until prefix plus text fit within
        min(max_length, model context).
        """
        with self._lock:
            if not self._shots:
                raise ServiceError("no recall shots configured on this server")
            ids = self._check_tokens(self._resolve_tokens(tokens, text))
            body = ids[1:] if ids[0] == BOS_ID else list(ids)
            shots = self._shots[-min(num_shots, len(self._shots)):]
            budget = min(max_length, self.model.config.n_positions)
            while shots and 1 + sum(len(s) for s in shots) + len(body) > budget:
                shots = shots[1:]
            prefix = [BOS_ID] + [t for shot in shots for t in shot]
            if len(prefix) + len(body) > budget:
                raise ServiceError(f"text of {len(body)} tokens cannot fit the "
                                   f"length budget {budget} even without shots")
            full = prefix + body
            # target span = every body token, matching the plain trace's length
            out = self._step_stats(self.model, full, target_from=len(prefix))
            out["ref_loss"] = None
            out["gradient_norm"] = None
            out["num_shots_used"] = len(shots)
            return out

    # -- generation -------------------------------------------------------

    @torch.no_grad()
    def _continue_from(self, prefix: list[int], max_new_tokens: int,
                       temperature: float | None,
                       generator: torch.Generator | None) -> list[int]:
        limit = self.model.config.n_positions
        step = self.model(torch.tensor([prefix], dtype=torch.long), use_cache=True)
        out: list[int] = []
        while len(out) < max_new_tokens and len(prefix) + len(out) < limit:
            logits = step.logits[0, -1].double()
            if temperature is None:
                nxt = int(torch.argmax(logits))
            else:
                # shift before scaling so tiny temperatures cannot overflow exp
                scaled = (logits - logits.max()) / temperature
                probs = torch.softmax(scaled, dim=-1)
                nxt = int(torch.multinomial(probs, 1, generator=generator))
            out.append(nxt)
            if len(out) == max_new_tokens or len(prefix) + len(out) >= limit:
                break
            step = self.model(torch.tensor([[nxt]], dtype=torch.long),
                              past_key_values=step.past_key_values, use_cache=True)
        return out

    def generate(self, prefix_tokens: Sequence[int], n: int, temperature: float,
                 max_new_tokens: int, include_greedy: bool = True,
                 seed: int = 0) -> dict:
        with self._lock:
            prefix = self._check_tokens(prefix_tokens, minimum=1)
            if temperature <= 0:
                raise ServiceError("temperature must be > 0")
            if n < 1:
                raise ServiceError("n must be >= 1")
            generator = torch.Generator().manual_seed(int(seed))
            samples = [self._continue_from(prefix, max_new_tokens, temperature, generator)
                       for _ in range(n)]
            greedy: list[int] = []
            if include_greedy:
                greedy = self._continue_from(prefix, max_new_tokens, None, None)
            return {
                "sampled_continuations": samples,
                "greedy_continuation": greedy,
                "n_samples": n,
                "temperature": temperature,
                "sample_texts": [decode(s) for s in samples],
                "greedy_text": decode(greedy),
            }

    # -- gradients and embeddings ----------------------------------------

    def gradient_norm(self, tokens: Sequence[int] | None = None,
                      text: str | None = None) -> float:
        with self._lock:
            ids = self._check_tokens(self._resolve_tokens(tokens, text))
            input_ids = torch.tensor([ids], dtype=torch.long)
            self.model.zero_grad(set_to_none=True)
            loss = self.model(input_ids, labels=input_ids).loss
            loss.backward()
            norm = global_grad_norm(self.model.parameters())
            self.model.zero_grad(set_to_none=True)
            return norm

    @torch.no_grad()
    def hidden_states(self, tokens: Sequence[int] | None = None,
                      text: str | None = None) -> list[list[float]]:
        """Mean-pooled hidden state per layer, embedding output included."""
        with self._lock:
            ids = self._check_tokens(self._resolve_tokens(tokens, text))
            input_ids = torch.tensor([ids], dtype=torch.long)
            out = self.model(input_ids, output_hidden_states=True)
            return [layer[0].double().mean(dim=0).tolist() for layer in out.hidden_states]

    def similarity(self, a: Sequence[int], b: Sequence[int]) -> float:
        if self.similarity_fn is None:
            raise ServiceError("similarity model not configured")
        return float(self.similarity_fn(list(a), list(b)))
