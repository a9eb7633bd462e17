"""Every scoring method must rank memorized members above held-out text.

Uses the session-scoped overfit model; inputs for each method are dumped
once and scored through the evaluation toolkit CLI, so this doubles as an
integration check of every score's file path.
"""

import json
import subprocess
import sys
from collections import Counter

import pytest

from miaadapter.dump import dump_corpus
from miaadapter.model import build_model
from miaadapter.service import ModelService
from miaadapter.tokenizer import encode

from e2e_utils import write_corpus_jsonl, write_split_dir

GRAY_BOX = ("loss", "refer", "gradient", "zlib", "mink", "minkpp", "dcpdd",
            "pac", "recall")
BLACK_BOX = ("samia", "cdd")


def _miaeval(*args: str) -> subprocess.CompletedProcess:
    return subprocess.run([sys.executable, "-m", "miaeval.cli", *args],
                          capture_output=True, text=True)


def _write_freq_table(texts, path):
    counts = Counter()
    for text in texts:
        counts.update(encode(text, add_bos=False))
    total = sum(counts.values())
    with open(path, "w", encoding="utf-8") as fh:
        for token_id in sorted(counts):
            fh.write(json.dumps({"token_id": token_id,
                                 "freq": counts[token_id] / total}) + "\n")
        fh.write(json.dumps({"fallback_frequency": 1.0 / total}) + "\n")


@pytest.fixture(scope="module")
def method_inputs(overfit_bundle, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("orientation")
    members = overfit_bundle["members"][:150]
    heldout = overfit_bundle["heldout"][:150]
    # non-member shots for the conditioned traces, disjoint from the eval set
    shots = overfit_bundle["heldout"][-12:]
    service = ModelService(overfit_bundle["model"],
                           reference_model=build_model(seed=7),
                           recall_shots=shots)

    write_corpus_jsonl(members, "member", "synth", tmp / "m.jsonl", "om")
    write_corpus_jsonl(heldout, "nonmember", "synth", tmp / "n.jsonl", "on")
    gray = tmp / "gray"
    print("\ndumping gray-box inputs for 150+150 examples ...")
    dump_corpus(service, [tmp / "m.jsonl", tmp / "n.jsonl"], gray, traces=True,
                conditioned=True, perturbed=True, gradients=True)
    write_split_dir(gray / "examples.jsonl", tmp / "gray_split", "synth",
                    min_examples=100)

    write_corpus_jsonl(members[:60], "member", "synth", tmp / "mb.jsonl", "bm")
    write_corpus_jsonl(heldout[:60], "nonmember", "synth", tmp / "nb.jsonl", "bn")
    black = tmp / "black"
    print("dumping generations for 60+60 examples ...")
    dump_corpus(service, [tmp / "mb.jsonl", tmp / "nb.jsonl"], black, traces=False,
                generations=True, n_samples=4)
    write_split_dir(black / "examples.jsonl", tmp / "black_split", "synth",
                    min_examples=50)

    _write_freq_table(overfit_bundle["heldout"], tmp / "freq.jsonl")
    return {"tmp": tmp, "gray": gray, "black": black}


def _auc(setup, method: str) -> float:
    tmp = setup["tmp"]
    if method in BLACK_BOX:
        split = tmp / "black_split"
        args = ["--generations", str(setup["black"] / "generations.jsonl")]
        expected_n = 60
    else:
        split = tmp / "gray_split"
        args = ["--traces", str(setup["gray"] / "traces.jsonl")]
        expected_n = 150
        if method == "zlib":
            args += ["--examples", str(setup["gray"] / "examples.jsonl")]
        elif method == "dcpdd":
            args += ["--freq", str(tmp / "freq.jsonl")]
        elif method == "pac":
            args += ["--perturbed-traces", str(setup["gray"] / "perturbed_traces.jsonl")]
        elif method == "recall":
            args += ["--conditioned-traces",
                     str(setup["gray"] / "conditioned_traces.jsonl")]
    scores = tmp / f"scores_{method}.jsonl"
    result = _miaeval("score", "--method", method, "--split", str(split),
                      *args, "--out", str(scores))
    assert result.returncode == 0, f"{method}: {result.stderr or result.stdout}"
    out = tmp / f"auc_{method}.json"
    result = _miaeval("eval", "auc", "--scores", str(scores), "--split", str(split),
                      "--out", str(out))
    assert result.returncode == 0, f"{method}: {result.stderr or result.stdout}"
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert payload["n_member"] == expected_n
    return payload["auc"]


def test_every_method_ranks_members_higher(method_inputs):
    aucs = {}
    for method in GRAY_BOX + BLACK_BOX:
        aucs[method] = _auc(method_inputs, method)
        print(f"  {method:9s} AUC = {aucs[method]:.3f}")
    failing = {m: a for m, a in aucs.items() if a < 0.5}
    assert not failing, f"methods oriented backwards: {failing}"
