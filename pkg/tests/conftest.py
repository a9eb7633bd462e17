import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from miaeval.records import Example, TokenTrace


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_example(eid="ex-0", domain="wiki", label="member", tokens=(1, 2, 3, 4)):
    from synthdata import detok

    return Example(example_id=eid, domain=domain, label=label,
                   text=detok(tokens), tokens=tuple(tokens))


def make_consistent_trace(eid, logprob, mu=None, sigma=None, entropy=None,
                          ref_loss=None, gradient_norm=None):
    """TokenTrace whose loss and moment sequences are internally consistent."""
    logprob = tuple(float(v) for v in logprob)
    n = len(logprob)
    entropy = tuple(entropy) if entropy is not None else tuple(1.0 for _ in range(n))
    mu = tuple(mu) if mu is not None else tuple(-e for e in entropy)
    sigma = tuple(sigma) if sigma is not None else tuple(1.0 for _ in range(n))
    loss = -sum(logprob) / n if n else 0.0
    return TokenTrace(example_id=eid, logprob_target=logprob, mu_logprob=mu,
                      sigma_logprob=sigma, entropy=entropy, loss=loss,
                      ref_loss=ref_loss, gradient_norm=gradient_norm)


@pytest.fixture
def trace_factory():
    return make_consistent_trace


@pytest.fixture
def example_factory():
    return make_example
