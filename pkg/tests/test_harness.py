import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedrulefit.core import FedConfig
from fedrulefit.harness import (accuracy_f1, auc, paired_differences, preset_scenarios,
                                run_method, simulate, summarize,
                                sweep_preprocess, write_results_csv)
from fedrulefit.synth import ScenarioSpec

FAST = FedConfig(n_trees=15, rounds=20, local_iters=5)


def brute_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    return np.mean([1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg])


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.5] * 4, [0, 1, 0, 1]) == 0.5
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
def test_auc_matches_pairs_and_is_rank_invariant(pairs):
    s = np.array([p[0] for p in pairs], float)
    y = np.array([p[1] for p in pairs], int)
    if y.min() == y.max():
        return
    a = auc(s, y)
    assert a == pytest.approx(brute_auc(s, y))
    assert auc(np.exp(3 * s) - 7, y) == pytest.approx(a)


def test_accuracy_f1_examples():
    assert accuracy_f1([0.9, 0.1], [1, 0]) == (1.0, 1.0)
    assert accuracy_f1([0.1, 0.2, 0.3], [1, 0, 1])[1] == 0.0
    acc, f1 = accuracy_f1([0.9, 0.8, 0.7, 0.1, 0.2], [1, 1, 0, 1, 0])
    assert f1 == pytest.approx(2 / 3) and acc == pytest.approx(3 / 5)


def test_degenerate_federation_equals_centralized():
    sc = ScenarioSpec.client_count(1)
    cfg = FAST.replace(dp_noise=False)
    fed = run_method("federated", sc, cfg, 4)
    cen = run_method("centralized", sc, cfg, 4, centralized_dp_noise=False)
    loc = run_method("local", sc, cfg, 4)
    for k in fed.metrics:
        assert abs(fed.metrics[k] - cen.metrics[k]) <= 1e-12
        assert abs(loc.metrics[k] - cen.metrics[k]) <= 1e-12


def test_replication_shapes_and_csv(tmp_path):
    sc = ScenarioSpec.client_count(2)
    res = simulate([sc], FAST, [0, 1])
    assert [r.method for r in res] == ["federated", "centralized", "local"] * 2
    assert all(0 <= v <= 1 for r in res for v in r.metrics.values())
    rows = summarize(res)
    assert [r["n"] for r in rows] == [2, 2, 2]
    diffs = paired_differences(res)
    assert {d["method"] for d in diffs} == {"federated", "local"}
    write_results_csv(res, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        table = list(csv.DictReader(fh))
    assert set(table[0]) == {"method", "scenario", "seed", "metric", "value"}
    assert sum(t["metric"] == "auc" for t in table) == 6


def test_presets():
    s1 = preset_scenarios("scenario1")
    assert [s.M for s in s1] == [2, 5, 10, 20]
    s3 = preset_scenarios("scenario3", "nonlinear")
    assert s3[2].proportions == (0.125, 0.25, 0.375, 0.875, 0.875)
    assert preset_scenarios("scenario2")[2].proportions == (0.05, 0.1, 0.15, 0.25, 0.45)


def test_sweep_grid_determinism_and_q1():
    sc = ScenarioSpec.client_count(5)
    a = sweep_preprocess([50], [1, 20], sc, FAST, [0])
    b = sweep_preprocess([50], [1, 20], sc, FAST, [0])
    assert [(r.method, r.metrics, r.K) for r in a] == [(r.method, r.metrics, r.K) for r in b]
    k = {r.method: r.K for r in a}
    assert k["federated[B=50,Q=1]"] < k["federated[B=50,Q=20]"]
    assert "federated[no-preprocess]" in k


def test_parallel_jobs_match_serial():
    sc = ScenarioSpec.client_count(2)
    serial = simulate([sc], FAST, [0, 1], methods=("federated",))
    par = simulate([sc], FAST, [0, 1], methods=("federated",), threads=2)
    assert [r.metrics for r in serial] == [r.metrics for r in par]
