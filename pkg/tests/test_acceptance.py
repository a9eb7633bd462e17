"""Acceptance gate: one test per release criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line per
criterion.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import norm, rankdata

from miaeval.config import load_config
from miaeval.features import config_for, score_mink, score_minkpp
from miaeval.kernels import normalized_levenshtein
from miaeval.probes import db_index, entropy_curves
from miaeval.runner import REPORT_DIR, run_experiment
from miaeval.splits import (SplitSet, SplitSpec, build_complete_split,
                            build_relative_split, build_truncate_split,
                            decile_bin_edges, save_split_set)
from miaeval.stats import (ks_test, roc_auc, select_threshold,
                           threshold_objective, spearman)

from conftest import make_consistent_trace
from synthdata import make_corpus, write_run_fixture
from test_kernels import dp_oracle
from test_stats import auc_all_pairs, oracle_threshold


def _report(num: int, detail: str) -> None:
    print(f"ACCEPTANCE {num:02d} PASS: {detail}")


def _random_trace(rng, n=None):
    n = n or int(rng.integers(5, 60))
    lp = -rng.exponential(1.0, size=n)
    mu = lp + rng.normal(0, 0.6, size=n)
    sigma = rng.uniform(0.05, 2.0, size=n)
    return make_consistent_trace("t", lp, mu=mu, sigma=sigma)


def test_01_auc_matches_all_pairs_oracle():
    rng = np.random.default_rng(101)
    start = time.monotonic()
    worst = 0.0
    for _ in range(200):
        n_m = int(rng.integers(1, 51))
        n_n = int(rng.integers(1, 51))
        members = rng.integers(0, 12, size=n_m).astype(float)
        nonmembers = rng.integers(0, 12, size=n_n).astype(float)
        got = roc_auc(members, nonmembers)
        expected = auc_all_pairs(members, nonmembers)
        worst = max(worst, abs(got - expected))
        assert abs(got - expected) <= 1e-9
    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    _report(1, f"200 instances, max |rank - brute force| = {worst:.2e}, {elapsed:.2f}s")


def test_02_gaussian_calibration():
    start = time.monotonic()
    rng = np.random.default_rng(31337)
    members = rng.normal(1.0, 1.0, size=20000)
    nonmembers = rng.normal(0.0, 1.0, size=20000)
    auc = roc_auc(members, nonmembers)
    elapsed = time.monotonic() - start
    assert 0.750 <= auc <= 0.770
    assert abs(norm.cdf(1 / math.sqrt(2)) - 0.7602) < 1e-4
    assert elapsed < 10.0
    _report(2, f"AUC = {auc:.4f} in [0.750, 0.770] (closed form 0.7602), {elapsed:.2f}s")


def test_03_mink_k100_and_monotonicity():
    rng = np.random.default_rng(103)
    for _ in range(100):
        trace = _random_trace(rng)
        full = score_mink(trace, config_for("mink", {"k_percent": 100})).value
        assert abs(full - (-trace.loss)) <= 1e-9
        ks = (1, 5, 10, 20, 40, 60, 80, 100)
        values = [score_mink(trace, config_for("mink", {"k_percent": k})).value
                  for k in ks]
        assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
    _report(3, "k=100 equals -loss to 1e-9 and min-k is monotone in k on 100 traces")


def test_04_minkpp_affine_invariance():
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(100):
        trace = _random_trace(rng)
        base = score_minkpp(trace, config_for("minkpp")).value
        lp = np.asarray(trace.logprob_target)
        mu = np.asarray(trace.mu_logprob)
        sigma = np.asarray(trace.sigma_logprob)
        for a in (0.5, 2.0, 10.0):
            for b in (-3.0, 0.0, 7.0):
                mapped = make_consistent_trace("t", a * lp + b, mu=a * mu + b,
                                               sigma=a * sigma)
                value = score_minkpp(mapped, config_for("minkpp")).value
                worst = max(worst, abs(value - base))
                assert abs(value - base) <= 1e-9
    _report(4, f"affine invariance on 100 traces x 9 maps, max dev = {worst:.2e}")


def test_05_edit_distance_matches_dp_oracle():
    rng = np.random.default_rng(105)
    for _ in range(1000):
        a = tuple(int(t) for t in rng.integers(0, 10, size=int(rng.integers(0, 30))))
        b = tuple(int(t) for t in rng.integers(0, 10, size=int(rng.integers(1, 30))))
        got = normalized_levenshtein(a, b)
        expected = dp_oracle(a, b) / max(len(a), len(b))
        assert got == expected
    _report(5, "1000 random pairs: normalized distance equals quadratic-DP oracle exactly")


def test_06_threshold_selection():
    rng = np.random.default_rng(106)
    t, tpr, fpr = select_threshold(rng.uniform(1, 2, 50), rng.uniform(-1, 0, 50), seed=9)
    assert tpr == 1.0 and fpr == 0.0
    for _ in range(100):
        members = rng.normal(0.4, 1.0, size=int(rng.integers(5, 40)))
        nonmembers = rng.normal(0.0, 1.0, size=int(rng.integers(5, 40)))
        seed = int(rng.integers(0, 100000))
        t, _, _ = select_threshold(members, nonmembers, seed=seed)
        _, oracle_obj, m_train, n_train = oracle_threshold(members, nonmembers, 0.8, seed)
        assert abs(threshold_objective(m_train, n_train, t) - oracle_obj) <= 1e-12
    _report(6, "separable val TPR=1/FPR=0; 100 instances match sweep oracle to 1e-12")


def test_07_split_builders(tmp_path):
    members = make_corpus(5000, "wiki", "member", seed=70, len_lo=20, len_hi=950)
    nonmembers = make_corpus(5000, "wiki", "nonmember", seed=71, len_lo=20, len_hi=950)

    def check_invariants(split: SplitSet):
        assert len(split.members) >= split.spec.min_examples
        assert len(split.nonmembers) >= split.spec.min_examples
        ids_m = {e.example_id for e in split.members}
        ids_n = {e.example_id for e in split.nonmembers}
        assert not ids_m & ids_n
        for ex in split.members + split.nonmembers:
            assert split.spec.admits_length(ex.length)

    built = 0
    for lo in range(0, 1000, 100):
        for method, builder in (("truncate", build_truncate_split),
                                ("complete", build_complete_split)):
            spec = SplitSpec(method=method, domain="wiki", length_lo=lo,
                             length_hi=lo + 100, seed=47103)
            outcome = builder(members, nonmembers, spec)
            if isinstance(outcome, SplitSet):
                check_invariants(outcome)
                built += 1
    for outcome in build_relative_split(members, nonmembers, "wiki", seed=47103):
        if isinstance(outcome, SplitSet):
            check_invariants(outcome)
            built += 1
    assert built >= 10

    # relative deciles equal the nearest-rank percentile oracle
    lengths = sorted(e.length for e in nonmembers)
    edges = decile_bin_edges(lengths)
    for i, p in enumerate(range(10, 100, 10), start=1):
        rank = int(np.ceil(p / 100 * len(lengths)))
        assert edges[i] == lengths[rank - 1] + 1
    assert edges[0] == lengths[0] and edges[-1] == lengths[-1] + 1

    # identical seeds give byte-identical persisted splits
    spec = SplitSpec(method="truncate", domain="wiki", length_lo=100, length_hi=200,
                     seed=47103)
    for name in ("a", "b"):
        save_split_set(build_truncate_split(members, nonmembers, spec), tmp_path / name)
    for fname in ("members.jsonl", "nonmembers.jsonl", "spec.json"):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()
    _report(7, f"{built} splits on a 5000-text corpus hold all invariants; "
               "deciles match oracle; seeded builds byte-identical")


def test_08_spearman_and_ks_calibration():
    rng = np.random.default_rng(108)
    for _ in range(100):
        n = int(rng.integers(3, 60))
        x = rng.integers(0, 6, size=n).astype(float)
        y = rng.integers(0, 6, size=n).astype(float)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        expected = np.corrcoef(rankdata(x), rankdata(y))[0, 1]
        assert abs(spearman(x, y) - expected) <= 1e-12

    rng = np.random.default_rng(20240809)
    trials = 2000
    rejects = sum(ks_test(rng.normal(size=200), rng.normal(size=200)).reject
                  for _ in range(trials))
    rate = rejects / trials
    assert 0.03 <= rate <= 0.07
    _report(8, f"spearman matches rank-then-Pearson oracle; KS null rate = {rate:.4f}")


def test_09_db_index():
    value = db_index([(0.0, 0.0), (0.0, 2.0)], [(10.0, 0.0), (10.0, 2.0)])
    assert value == 0.2
    rng = np.random.default_rng(109)
    m = rng.normal(0, 1, size=(60, 8))
    n = rng.normal(2, 1, size=(60, 8))
    base = db_index(m, n)
    q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    assert abs(db_index(m @ q, n @ q) - base) <= 1e-9
    for c in (0.25, 7.0):
        assert abs(db_index(c * m, c * n) - base) <= 1e-9
    _report(9, "hand case = 0.2 exactly; rotation/scale invariant to 1e-9")


def test_10_entropy_curves():
    members = [make_consistent_trace(f"m{i}", [-1.0] * 36, entropy=[1.0] * 36)
               for i in range(4)]
    nonmembers = [make_consistent_trace(f"n{i}", [-1.0] * 36, entropy=[1.5] * 36)
                  for i in range(4)]
    curves = entropy_curves(members, nonmembers)
    assert curves.accumulated_diff[35] == 18.0

    rng = np.random.default_rng(110)
    members = [make_consistent_trace(f"m{i}", [-1.0] * 40,
                                     entropy=rng.uniform(0, 3, size=40))
               for i in range(6)]
    nonmembers = [make_consistent_trace(f"n{i}", [-1.0] * 40,
                                        entropy=rng.uniform(0, 3, size=40))
                  for i in range(6)]
    curves = entropy_curves(members, nonmembers)
    running = 0.0
    for s, (m, n) in enumerate(zip(curves.mean_member, curves.mean_nonmember)):
        running += n - m
        assert curves.accumulated_diff[s] == running
    _report(10, "constant classes give accumulated_diff[35] = 18.0 exactly; "
                "telescoping holds bit-for-bit")


def test_11_run_determinism_and_resume(tmp_path):
    import shutil

    fixture = tmp_path / "fixture"
    fixture.mkdir()
    write_run_fixture(fixture, n=300, methods=("loss", "cdd"), seeds=(47103, 28103),
                      length_ranges=((0, 100),))

    def clone(name):
        dest = tmp_path / name
        dest.mkdir()
        for entry in ("experiment.toml", "wiki_member.jsonl", "wiki_nonmember.jsonl",
                      "freq.jsonl", "dumps"):
            src = fixture / entry
            (shutil.copytree if src.is_dir() else shutil.copy)(src, dest / entry)
        return load_config(dest / "experiment.toml")

    cfg_a = clone("run_a")
    cfg_b = clone("run_b")
    cfg_c = clone("run_c")

    outcome_a = run_experiment(cfg_a)
    outcome_b = run_experiment(cfg_b)
    assert outcome_a.results == outcome_b.results
    report_a = cfg_a.output_dir / REPORT_DIR
    report_b = cfg_b.output_dir / REPORT_DIR
    names_a = sorted(p.name for p in report_a.iterdir())
    assert names_a == sorted(p.name for p in report_b.iterdir())
    for name in names_a:
        assert (report_a / name).read_bytes() == (report_b / name).read_bytes(), name

    class Killed(RuntimeError):
        pass

    calls = {"n": 0}

    def killer(key, status):
        calls["n"] += 1
        if calls["n"] == 3:
            raise Killed()

    with pytest.raises(Killed):
        run_experiment(cfg_c, on_key_done=killer)
    outcome_c = run_experiment(cfg_c)
    assert outcome_c.cached == 3
    assert outcome_c.results == outcome_a.results
    report_c = cfg_c.output_dir / REPORT_DIR
    for name in names_a:
        assert (report_c / name).read_bytes() == (report_a / name).read_bytes(), name
    _report(11, f"two runs byte-identical across {len(names_a)} report files; "
                "kill-resume equals uninterrupted run")
