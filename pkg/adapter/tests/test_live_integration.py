"""Serve the adapter over HTTP and drive it from the evaluation toolkit CLI."""

import json
import socket
import subprocess
import sys
import threading
import time

import pytest
import uvicorn

from miaadapter.model import build_model
from miaadapter.server import create_app
from miaadapter.service import ModelService

from e2e_utils import make_texts, write_corpus_jsonl


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture(scope="module")
def live_server(tmp_path_factory):
    service = ModelService(build_model(seed=7),
                           recall_shots=[f"shot text {i}" for i in range(12)])
    app = create_app(service, artifact_dir=tmp_path_factory.mktemp("artifacts"))
    port = _free_port()
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 30
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)


def test_run_matrix_against_live_adapter(live_server, tmp_path):
    # corpora small enough that live tracing stays fast
    members = make_texts(60, seed=21, lo=25, hi=45)
    heldout = make_texts(60, seed=22, lo=25, hi=45)
    write_corpus_jsonl(members, "member", "synth", tmp_path / "m.jsonl", "m",
                       include_tokens=True)
    write_corpus_jsonl(heldout, "nonmember", "synth", tmp_path / "n.jsonl", "n",
                       include_tokens=True)

    config = tmp_path / "experiment.toml"
    config.write_text(f"""\
output_dir = "out"
methods = ["loss", "mink"]
split_methods = ["complete"]
model_tags = ["live"]
seeds = [47103]
min_examples = 25
length_ranges = [[0, 100]]
adapter_endpoint = "{live_server}"

[corpora.synth]
member = "m.jsonl"
nonmember = "n.jsonl"
""", encoding="utf-8")

    result = subprocess.run([sys.executable, "-m", "miaeval.cli", "run",
                             "--config", str(config)],
                            capture_output=True, text=True)
    assert result.returncode == 0, result.stderr or result.stdout

    results_csv = tmp_path / "out" / "reports" / "results.csv"
    lines = results_csv.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3  # header + loss + mink rows
    assert lines[1].startswith("loss,complete-synth-L0-100,synth,live,47103")


def test_recall_method_against_live_adapter(live_server, tmp_path):
    members = make_texts(40, seed=31, lo=25, hi=40)
    heldout = make_texts(40, seed=32, lo=25, hi=40)
    write_corpus_jsonl(members, "member", "synth", tmp_path / "m.jsonl", "m",
                       include_tokens=True)
    write_corpus_jsonl(heldout, "nonmember", "synth", tmp_path / "n.jsonl", "n",
                       include_tokens=True)
    config = tmp_path / "experiment.toml"
    config.write_text(f"""\
output_dir = "out"
methods = ["recall"]
split_methods = ["complete"]
model_tags = ["live"]
seeds = [47103]
min_examples = 20
length_ranges = [[0, 100]]
adapter_endpoint = "{live_server}"

[corpora.synth]
member = "m.jsonl"
nonmember = "n.jsonl"
""", encoding="utf-8")
    result = subprocess.run([sys.executable, "-m", "miaeval.cli", "run",
                             "--config", str(config)],
                            capture_output=True, text=True)
    assert result.returncode == 0, result.stderr or result.stdout
    rows = (tmp_path / "out" / "reports" / "results.csv").read_text(
        encoding="utf-8").splitlines()
    assert rows[1].startswith("recall,")


def test_adapter_cli_init_and_dump(tmp_path):
    checkpoint = tmp_path / "model.pt"
    result = subprocess.run([sys.executable, "-m", "miaadapter.cli", "init-model",
                             "--out", str(checkpoint)],
                            capture_output=True, text=True)
    assert result.returncode == 0, result.stderr
    assert checkpoint.exists()

    corpus = tmp_path / "c.jsonl"
    write_corpus_jsonl(["cli dump text one", "cli dump text two"], "member",
                       "synth", corpus, "c")
    out_dir = tmp_path / "dump"
    result = subprocess.run([sys.executable, "-m", "miaadapter.cli", "dump",
                             "--corpus", str(corpus), "--out", str(out_dir),
                             "--model-path", str(checkpoint), "--gradients"],
                            capture_output=True, text=True)
    assert result.returncode == 0, result.stderr
    counts = json.loads(result.stdout.strip().splitlines()[-1])
    assert counts == {"examples": 2, "traces": 2}
    assert (out_dir / "traces.jsonl").exists()
