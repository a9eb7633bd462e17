import numpy as np
import pytest

from miaadapter.probe import ProbeConfig, train_probe


def separated_clusters(rng, n=200, dim=16, gap=10.0):
    members = rng.normal(0, 1, size=(n, dim))
    members[:, 0] += gap
    nonmembers = rng.normal(0, 1, size=(n, dim))
    vectors = np.vstack([members, nonmembers])
    labels = [1] * n + [0] * n
    return vectors, labels


class TestProbe:
    def test_defaults(self):
        cfg = ProbeConfig()
        assert (cfg.hidden_dim, cfg.layers, cfg.heads, cfg.epochs) == (256, 4, 8, 4)
        assert cfg.train_fraction == 0.8

    def test_separable_clusters_learned(self, rng):
        vectors, labels = separated_clusters(rng)
        accuracy, _, meta = train_probe(vectors, labels, ProbeConfig(seed=0))
        assert accuracy >= 0.95
        assert meta["config"]["hidden_dim"] == 256
        assert meta["n_train"] + meta["n_val"] == len(labels)

    def test_shuffled_labels_stay_at_chance(self, rng):
        vectors, labels = separated_clusters(rng)
        shuffled = list(rng.permutation(labels))
        accuracy, _, _ = train_probe(vectors, shuffled, ProbeConfig(seed=0))
        assert 0.4 <= accuracy <= 0.6

    def test_single_class_rejected(self, rng):
        vectors = rng.normal(size=(20, 4))
        with pytest.raises(ValueError, match="both classes"):
            train_probe(vectors, [1] * 20)

    def test_deterministic_given_seed(self, rng):
        vectors, labels = separated_clusters(rng, n=60, dim=8)
        acc_a, _, _ = train_probe(vectors, labels, ProbeConfig(seed=3, epochs=1))
        acc_b, _, _ = train_probe(vectors, labels, ProbeConfig(seed=3, epochs=1))
        assert acc_a == acc_b

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="one label per row"):
            train_probe(rng.normal(size=(10, 4)), [0, 1])
