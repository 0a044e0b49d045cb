import csv
import json

import numpy as np

from fedrulefit.cli import main
from fedrulefit.model import load_model, predict_proba


def write_clients(tmp_path, n_clients=3, n=120, columns=("age", "sex", "ISS", "GCS")):
    rng = np.random.default_rng(0)
    paths = []
    for m in range(n_clients):
        age, sex = rng.uniform(18, 90, n), rng.integers(0, 2, n)
        iss, gcs = rng.integers(1, 75, n), rng.integers(3, 16, n)
        eta = -1 + 0.06 * (iss - 30) - 0.3 * (gcs - 10)
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(int)
        p = tmp_path / f"client{m}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*columns, "outcome"])
            w.writerows(zip(age, sex, iss, gcs, y))
        paths.append(str(p))
    return paths


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


FAST = {"n_trees": 20, "rounds": 20, "local_iters": 5}
RANGES = {"age": [0, 120], "sex": [0, 1], "ISS": [0, 75], "GCS": [3, 15]}


def test_simulate_writes_results_and_metadata(tmp_path):
    cfg = write_config(tmp_path, {
        "seed": 2, "replications": 2, "fed_config": FAST,
        "scenarios": [{"kind": "client_count", "M": 2, "proportions": [0.5, 0.5]},
                      {"kind": "client_count", "M": 3, "proportions": [0.4, 0.3, 0.3]}],
    })
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    with open(out / "results.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["metric"] == "auc"]
    assert len(rows) == 2 * 3 * 2  # scenarios x methods x seeds
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["seeds"] == [2, 3] and meta["artifact_version"]
    assert meta["fed_config"]["n_trees"] == 20
    assert (out / "summary.csv").exists()


def test_simulate_seed_override_reproduces(tmp_path):
    cfg = write_config(tmp_path, {"replications": 1, "fed_config": FAST, "methods": ["federated"],
                                  "scenarios": [{"preset": "scenario1"}]})
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "9"])
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "9"])
    assert (tmp_path / "a/results.csv").read_text().count("auc") == 4
    a = [l for l in (tmp_path / "a/results.csv").read_text().splitlines() if "wall_time" not in l
         and "ensemble_time" not in l]
    b = [l for l in (tmp_path / "b/results.csv").read_text().splitlines() if "wall_time" not in l
         and "ensemble_time" not in l]
    assert a == b


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert "invalid JSON" in capsys.readouterr().err
    unknown = write_config(tmp_path, {"scenarios": [{"preset": "scenario1"}], "colour": 1})
    assert main(["simulate", "--config", unknown]) == 2
    bad_fc = write_config(tmp_path, {"fed_config": {"lambda": 1}}, "b.json")
    assert main(["simulate", "--config", bad_fc]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2


def test_unwritable_out_dir_exit_3(tmp_path):
    cfg = write_config(tmp_path, {"replications": 1, "fed_config": FAST,
                                  "scenarios": [{"kind": "client_count", "M": 1,
                                                 "proportions": [1.0]}]})
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", "--config", cfg, "--out", str(blocker / "sub")]) == 3


def test_train_predict_explain(tmp_path):
    clients = write_clients(tmp_path)
    out = tmp_path / "model"
    cfg = write_config(tmp_path, {"seed": 1, "clients": clients, "fed_config": FAST,
                                  "bin_ranges": RANGES, "out_dir": str(out)})
    assert main(["train", "--config", cfg]) == 0
    for name in ("model.json", "importance.json", "top_rules.txt", "subgroup_rates.csv",
                 "metadata.json"):
        assert (out / name).exists()
    table = (out / "top_rules.txt").read_text().splitlines()
    assert 2 <= len(table) <= 2 + 5

    pred = tmp_path / "pred"
    assert main(["predict", "--model", str(out / "model.json"), "--data", clients[0],
                 "--out", str(pred)]) == 0
    with open(pred / "predictions.csv") as fh:
        got = np.array([float(r["probability"]) for r in csv.DictReader(fh)])
    X = np.loadtxt(clients[0], delimiter=",", skiprows=1)[:, :4]
    assert np.array_equal(got, predict_proba(load_model(out / "model.json"), X))

    expl = tmp_path / "expl"
    assert main(["explain", "--model", str(out / "model.json"), "--data", *clients[:2],
                 "--out", str(expl)]) == 0
    assert (expl / "importance.json").exists()


def test_train_single_client_is_centralized(tmp_path):
    from fedrulefit.core import ClientPartition, FedConfig, load_csv
    from fedrulefit.model import fit_rulefit
    clients = write_clients(tmp_path, 1)
    out = tmp_path / "m"
    cfg = write_config(tmp_path, {"seed": 5, "clients": clients, "fed_config": FAST,
                                  "bin_ranges": RANGES, "out_dir": str(out)})
    assert main(["train", "--config", cfg]) == 0
    ref = fit_rulefit(ClientPartition((load_csv(clients[0], "outcome"),)), FedConfig(**FAST), 5,
                      bin_ranges={k: tuple(v) for k, v in RANGES.items()})
    got = load_model(out / "model.json")
    assert got.rules.rules == ref.rules.rules
    assert np.array_equal(got.coefficients.to_vector(), ref.coefficients.to_vector())


def test_train_mismatched_headers(tmp_path, capsys):
    a = write_clients(tmp_path, 1)
    sub = tmp_path / "other"
    sub.mkdir()
    b = write_clients(sub, 1, columns=("age", "sex", "ISS", "GCS_total"))
    cfg = write_config(tmp_path, {"clients": a + b, "fed_config": FAST})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "differ" in capsys.readouterr().err


def test_train_single_class_client(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("a,outcome\n" + "".join(f"{i},1\n" for i in range(10)))
    cfg = write_config(tmp_path, {"clients": [str(p)], "fed_config": FAST})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_predict_missing_column_named(tmp_path, capsys):
    clients = write_clients(tmp_path, 1)
    cfg = write_config(tmp_path, {"clients": clients, "fed_config": FAST, "bin_ranges": RANGES})
    main(["train", "--config", cfg, "--out", str(tmp_path / "m")])
    partial = tmp_path / "partial.csv"
    partial.write_text("age,sex,ISS\n40,1,20\n")
    code = main(["predict", "--model", str(tmp_path / "m/model.json"), "--data", str(partial)])
    assert code == 2
    assert "GCS" in capsys.readouterr().err


def test_sweep(tmp_path):
    cfg = write_config(tmp_path, {"replications": 1, "fed_config": FAST,
                                  "sweep": {"n_bins": [50], "n_quantiles": [5, 10]}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    text = (tmp_path / "s/summary.csv").read_text()
    assert "federated[B=50,Q=5]" in text and "federated[no-preprocess]" in text


def test_numeric_failure_exit_4(tmp_path, monkeypatch):
    import fedrulefit.fedda as fedda
    monkeypatch.setattr(fedda, "DIVERGENCE_LIMIT", 1e-6)
    cfg = write_config(tmp_path, {"replications": 1, "fed_config": FAST, "methods": ["federated"],
                                  "scenarios": [{"kind": "client_count", "M": 1,
                                                 "proportions": [1.0]}]})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 4
