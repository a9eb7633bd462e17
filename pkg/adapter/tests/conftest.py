import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from miaadapter.dump import dump_corpus
from miaadapter.model import build_model
from miaadapter.service import ModelService


@pytest.fixture(scope="session")
def base_service():
    """Service over the deterministic random-init model; shared across tests."""
    return ModelService(build_model(seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def overfit_bundle(tmp_path_factory):
    """Model overfit on 500 member texts, with dumped traces and a split dir.

    Trains once per session (a few minutes on CPU); shared by the end-to-end
    acceptance check and the per-method orientation checks.
    """
    from e2e_utils import (make_texts, overfit_on_members, write_corpus_jsonl,
                           write_split_dir)

    tmp = tmp_path_factory.mktemp("overfit")
    start = time.monotonic()
    members = make_texts(500, seed=1)
    heldout = make_texts(500, seed=2)
    model = build_model(seed=7)
    print("\ntraining the built-in model on 500 member texts ...")
    stats = overfit_on_members(model, members, heldout, verbose=True)
    assert stats["reached_target"], f"training never reached the loss target: {stats}"

    service = ModelService(model)
    member_corpus = tmp / "members_corpus.jsonl"
    heldout_corpus = tmp / "heldout_corpus.jsonl"
    write_corpus_jsonl(members, "member", "synth", member_corpus, "m")
    write_corpus_jsonl(heldout, "nonmember", "synth", heldout_corpus, "n")
    dump_dir = tmp / "dump"
    dump_corpus(service, [member_corpus, heldout_corpus], dump_dir, traces=True)
    split_dir = tmp / "split"
    write_split_dir(dump_dir / "examples.jsonl", split_dir, "synth")
    return {"tmp": tmp, "dump": dump_dir, "split": split_dir, "stats": stats,
            "start": start, "model": model, "members": members,
            "heldout": heldout}
