import math

import numpy as np
import pytest
import torch

from miaadapter.model import build_model
from miaadapter.service import (ModelService, ServiceError, global_grad_norm,
                                lexical_similarity)
from miaadapter.tokenizer import BOS_ID, VOCAB_SIZE, decode, encode


class TestTokenizer:
    def test_round_trip_ascii(self):
        text = "hello, adapter world"
        assert decode(encode(text)) == text

    def test_bos_prepended(self):
        tokens = encode("ab")
        assert tokens[0] == BOS_ID
        assert tokens[1:] == [97, 98]

    def test_vocab_size(self):
        assert VOCAB_SIZE == 257


class TestTrace:
    def test_shape_and_consistency(self, base_service):
        text = "the quick brown fox"
        tokens = encode(text)
        out = base_service.trace(text=text)
        n = len(tokens) - 1
        for key in ("logprob_target", "mu_logprob", "sigma_logprob", "entropy"):
            assert len(out[key]) == n
        assert out["loss"] == pytest.approx(-np.mean(out["logprob_target"]), abs=1e-9)
        assert all(lp <= 0 for lp in out["logprob_target"])
        assert all(s >= 0 for s in out["sigma_logprob"])
        cap = math.log(VOCAB_SIZE)
        assert all(0 <= e <= cap + 1e-9 for e in out["entropy"])

    def test_entropy_is_negated_mean_logprob(self, base_service):
        out = base_service.trace(text="abcd")
        for mu, ent in zip(out["mu_logprob"], out["entropy"]):
            assert ent == pytest.approx(-mu, abs=1e-12)

    def test_deterministic(self, base_service):
        a = base_service.trace(text="determinism check")
        b = base_service.trace(text="determinism check")
        assert a == b

    def test_single_token_rejected(self, base_service):
        with pytest.raises(ServiceError, match="at least 2"):
            base_service.trace(text="")

    def test_context_overflow_rejected(self, base_service):
        too_long = "x" * (base_service.model.config.n_positions + 10)
        with pytest.raises(ServiceError, match="context"):
            base_service.trace(text=too_long)

    def test_bad_token_id_rejected(self, base_service):
        with pytest.raises(ServiceError, match="vocabulary"):
            base_service.trace(tokens=[BOS_ID, 5000])

    def test_reference_model_fills_ref_loss(self):
        service = ModelService(build_model(seed=7), reference_model=build_model(seed=8))
        out = service.trace(text="reference check")
        assert out["ref_loss"] is not None and out["ref_loss"] >= 0
        assert out["ref_loss"] != pytest.approx(out["loss"])


class TestTraceConditioned:
    def _service(self, n_shots=12, shot_len=40):
        shots = [f"shot {i} " + "y" * shot_len for i in range(n_shots)]
        return ModelService(build_model(seed=7), recall_shots=shots)

    def test_same_span_as_plain_trace(self):
        service = self._service()
        text = "span alignment check"
        plain = service.trace(text=text)
        cond = service.trace_conditioned(text=text)
        assert len(cond["logprob_target"]) == len(plain["logprob_target"])

    def test_prefix_changes_likelihood(self):
        service = self._service()
        text = "prefix influence check"
        plain = service.trace(text=text)
        cond = service.trace_conditioned(text=text)
        assert cond["logprob_target"] != plain["logprob_target"]

    def test_shot_shrink_rule(self):
        service = self._service(n_shots=12, shot_len=100)
        text = "z" * 500
        out = service.trace_conditioned(text=text, num_shots=12, max_length=1000)
        # 12 shots of >100 tokens each cannot fit a 1000-token budget with a
        # 500-token text; shots drop from the front until it fits.
        assert out["num_shots_used"] < 12
        assert len(out["logprob_target"]) == len(encode(text)) - 1

    def test_no_shots_configured_rejected(self, base_service):
        with pytest.raises(ServiceError, match="shots"):
            base_service.trace_conditioned(text="abc")

    def test_text_longer_than_budget_rejected(self):
        service = self._service()
        with pytest.raises(ServiceError, match="budget"):
            service.trace_conditioned(text="z" * 999, max_length=500)


class TestGenerate:
    def test_seeded_determinism(self, base_service):
        prefix = encode("abc")
        a = base_service.generate(prefix, n=3, temperature=0.8, max_new_tokens=8, seed=5)
        b = base_service.generate(prefix, n=3, temperature=0.8, max_new_tokens=8, seed=5)
        assert a["sampled_continuations"] == b["sampled_continuations"]
        assert a["greedy_continuation"] == b["greedy_continuation"]

    def test_different_seeds_differ(self, base_service):
        prefix = encode("abc")
        a = base_service.generate(prefix, n=3, temperature=0.8, max_new_tokens=8, seed=5)
        b = base_service.generate(prefix, n=3, temperature=0.8, max_new_tokens=8, seed=6)
        assert a["sampled_continuations"] != b["sampled_continuations"]

    def test_tiny_temperature_matches_greedy(self, base_service):
        prefix = encode("greedy limit")
        out = base_service.generate(prefix, n=2, temperature=1e-6, max_new_tokens=10,
                                    seed=1, include_greedy=True)
        for sample in out["sampled_continuations"]:
            assert sample == out["greedy_continuation"]

    def test_sample_count_and_length(self, base_service):
        out = base_service.generate(encode("abc"), n=4, temperature=0.8,
                                    max_new_tokens=6, seed=0)
        assert out["n_samples"] == 4
        assert len(out["sampled_continuations"]) == 4
        assert all(len(s) == 6 for s in out["sampled_continuations"])

    def test_context_limit_truncates(self, base_service):
        limit = base_service.model.config.n_positions
        prefix = [BOS_ID] + [97] * (limit - 3)
        out = base_service.generate(prefix, n=1, temperature=0.8, max_new_tokens=10,
                                    seed=0)
        assert len(out["sampled_continuations"][0]) == limit - len(prefix)

    def test_nonpositive_temperature_rejected(self, base_service):
        with pytest.raises(ServiceError, match="temperature"):
            base_service.generate(encode("a"), n=1, temperature=0.0,
                                  max_new_tokens=3, seed=0)


class TestGradient:
    def test_nonnegative_and_repeatable(self, base_service):
        a = base_service.gradient_norm(text="gradient check")
        b = base_service.gradient_norm(text="gradient check")
        assert a >= 0
        assert a == b

    def test_norm_helper_matches_analytic_toy(self):
        w = torch.tensor([2.0], requires_grad=True)
        b = torch.tensor([0.5], requires_grad=True)
        x, target = 3.0, 1.0
        loss = (w * x + b - target) ** 2
        loss.backward()
        residual = 2 * (w.item() * x + b.item() - target)
        expected = math.sqrt((residual * x) ** 2 + residual ** 2)
        assert global_grad_norm([w, b]) == pytest.approx(expected, abs=1e-9)

    def test_gradients_do_not_leak_into_traces(self, base_service):
        base_service.gradient_norm(text="warmup")
        before = base_service.trace(text="leak check")
        base_service.gradient_norm(text="another gradient")
        after = base_service.trace(text="leak check")
        assert before == after


class TestHiddenStates:
    def test_layer_count_includes_embedding_output(self, base_service):
        layers = base_service.hidden_states(text="layer count")
        assert len(layers) == base_service.model.config.n_layer + 1

    def test_identical_texts_identical_vectors(self, base_service):
        a = base_service.hidden_states(text="same text")
        b = base_service.hidden_states(text="same text")
        assert a == b

    def test_pooling_matches_per_position_average(self, base_service):
        text = "pooling oracle"
        ids = torch.tensor([encode(text)], dtype=torch.long)
        with torch.no_grad():
            states = base_service.model(ids, output_hidden_states=True).hidden_states
        pooled = base_service.hidden_states(text=text)
        for layer, vec in enumerate(pooled):
            expected = states[layer][0].double().numpy().mean(axis=0)
            assert np.allclose(vec, expected, atol=1e-12)


class TestSimilarity:
    def test_unconfigured_rejected(self, base_service):
        with pytest.raises(ServiceError, match="similarity"):
            base_service.similarity([1, 2], [1, 2])

    def test_lexical_plugin(self):
        service = ModelService(build_model(seed=7), similarity=lexical_similarity)
        assert service.similarity([1, 2, 3], [2, 3, 4]) == pytest.approx(2 / 3)
        assert service.similarity([1], [1]) == 1.0
