"""Simulation protocol: federated vs centralized vs local RuleFit, metrics, sweeps."""

from __future__ import annotations

import csv
import itertools
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import ClientPartition, FedConfig, sub_seed
from .model import fit_rulefit, predict_proba
from .synth import ScenarioSpec, gen_scenario

METHODS = ("federated", "centralized", "local")
METRICS = ("auc", "accuracy", "f1")

SCENARIO_PRESETS = {
    "scenario1": [(M, (1 / M,) * M) for M in (2, 5, 10, 20)],
    "scenario2": [
        (5, (0.2, 0.2, 0.2, 0.2, 0.2)),
        (5, (0.1, 0.15, 0.2, 0.25, 0.3)),
        (5, (0.05, 0.1, 0.15, 0.25, 0.45)),
    ],
    "scenario3": [
        (5, (0.5, 0.5, 0.5, 0.5, 0.5)),
        (5, (0.25, 0.375, 0.5, 0.625, 0.75)),
        (5, (0.125, 0.250, 0.375, 0.875, 0.875)),
    ],
}
_PRESET_KIND = {"scenario1": "client_count", "scenario2": "size_imbalance",
                "scenario3": "outcome_imbalance"}


def preset_scenarios(name: str, model: str = "linear", N_total: int = 1000,
                     p: int = 10) -> list[ScenarioSpec]:
    return [ScenarioSpec(_PRESET_KIND[name], M, props, model, N_total, p)
            for M, props in SCENARIO_PRESETS[name]]


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes in the labels")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def accuracy_f1(scores, labels, threshold: float = 0.5):
    """Accuracy and F1 of ``score >= threshold``; F1 is 0 when there are no true positives."""
    pred = np.asarray(scores, dtype=float) >= threshold
    y = np.asarray(labels).astype(bool)
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    acc = float(np.mean(pred == y))
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if tp else 0.0
    return acc, float(f1)


def evaluate(scores, labels, threshold: float = 0.5) -> dict:
    acc, f1 = accuracy_f1(scores, labels, threshold)
    return {"auc": auc(scores, labels), "accuracy": acc, "f1": f1}


@dataclass
class RunResult:
    method: str
    scenario: str
    seed: int
    metrics: dict
    K: float
    wall_time: float
    extra: dict = field(default_factory=dict)


def _fit_eval(train: ClientPartition, test_X, test_y, config, seed, restrict_splits=True):
    t0 = time.perf_counter()
    model = fit_rulefit(train, config, seed, restrict_splits=restrict_splits)
    wall = time.perf_counter() - t0
    return evaluate(predict_proba(model, test_X), test_y), model, wall


def run_replication(scenario: ScenarioSpec, config: FedConfig, seed: int,
                    methods=METHODS, centralized_dp_noise: bool | None = None) -> list[RunResult]:
    """All requested methods on one (train, test) draw of ``scenario``.

    Every method fits with the same pipeline seed, so a one-client federation,
    the pooled fit and a lone local client coincide exactly.
    """
    train, test = gen_scenario(scenario, seed)
    pooled_test = test.pooled()
    fit_seed = sub_seed(seed, "fit")
    label = scenario.label()
    out = []
    for method in methods:
        if method == "federated":
            m, model, wall = _fit_eval(train, pooled_test.covariates, pooled_test.outcomes,
                                       config, fit_seed)
            out.append(RunResult(method, label, seed, m, model.metadata["K"], wall,
                                 {"ensemble_time": model.metadata["timings"]["ensemble"]}))
        elif method == "centralized":
            cfg = config
            if centralized_dp_noise is not None:
                cfg = config.replace(dp_noise=centralized_dp_noise)
            central = ClientPartition((train.pooled(),))
            m, model, wall = _fit_eval(central, pooled_test.covariates, pooled_test.outcomes,
                                       cfg, fit_seed)
            out.append(RunResult(method, label, seed, m, model.metadata["K"], wall,
                                 {"ensemble_time": model.metadata["timings"]["ensemble"]}))
        elif method == "local":
            per_client, Ks, wall = [], [], 0.0
            for d in train.clients:
                m, model, w = _fit_eval(ClientPartition((d,)), pooled_test.covariates,
                                        pooled_test.outcomes, config, fit_seed)
                per_client.append(m)
                Ks.append(model.metadata["K"])
                wall += w
            avg = {k: float(np.mean([m[k] for m in per_client])) for k in METRICS}
            out.append(RunResult(method, label, seed, avg, float(np.mean(Ks)), wall))
        else:
            raise ValueError(f"unknown method {method!r}")
    return out


def run_method(method: str, scenario: ScenarioSpec, config: FedConfig, seed: int,
               **kw) -> RunResult:
    return run_replication(scenario, config, seed, (method,), **kw)[0]


def _sweep_cell(args):
    scenario, config, seed, restrict = args
    train, test = gen_scenario(scenario, seed)
    t = test.pooled()
    m, model, wall = _fit_eval(train, t.covariates, t.outcomes, config,
                               sub_seed(seed, "fit"), restrict)
    if restrict:
        label = f"federated[B={config.n_bins},Q={config.n_quantiles}]"
    else:
        label = "federated[no-preprocess]"
    return RunResult(label, scenario.label(), seed, m, model.metadata["K"], wall,
                     {"ensemble_time": model.metadata["timings"]["ensemble"],
                      "rulegen_time": model.metadata["timings"]["rulegen"],
                      "n_bins": config.n_bins, "n_quantiles": config.n_quantiles})


def sweep_preprocess(B_values, Q_values, scenario: ScenarioSpec, config: FedConfig,
                     seeds, baseline: bool = True, threads: int = 1) -> list[RunResult]:
    """Federated runs over a (bins x quantiles) grid plus the unrestricted-split baseline."""
    jobs = [(scenario, config.replace(n_bins=B, n_quantiles=Q), s, True)
            for B, Q in itertools.product(B_values, Q_values) for s in seeds]
    if baseline:
        jobs += [(scenario, config, s, False) for s in seeds]
    return run_jobs(_sweep_cell, jobs, threads)


def _replication_job(args):
    return run_replication(*args)


def run_jobs(fn, jobs, threads: int = 1) -> list:
    """Map ``fn`` over ``jobs``, optionally across processes; order follows ``jobs``."""
    if threads <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def simulate(scenarios, config: FedConfig, seeds, methods=METHODS,
             threads: int = 1, centralized_dp_noise: bool | None = None) -> list[RunResult]:
    jobs = [(sc, config, s, tuple(methods), centralized_dp_noise)
            for sc in scenarios for s in seeds]
    nested = run_jobs(_replication_job, jobs, threads)
    return [r for batch in nested for r in batch]


def summarize(results) -> list[dict]:
    """Mean and SD of each metric per (method, scenario), in first-seen order."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.method, r.scenario), []).append(r)
    rows = []
    for (method, scenario), rs in groups.items():
        row = {"method": method, "scenario": scenario, "n": len(rs)}
        for k in (*METRICS, "K", "wall_time"):
            vals = [r.metrics[k] if k in r.metrics else getattr(r, k) for r in rs]
            row[f"{k}_mean"] = statistics.fmean(vals)
            row[f"{k}_sd"] = statistics.stdev(vals) if len(vals) > 1 else 0.0
        rows.append(row)
    return rows


def paired_differences(results, reference: str = "centralized") -> list[dict]:
    """Per-seed metric differences against ``reference`` on the same scenario draw."""
    ref = {(r.scenario, r.seed): r for r in results if r.method == reference}
    out = []
    for r in results:
        base = ref.get((r.scenario, r.seed))
        if r.method == reference or base is None:
            continue
        for k in METRICS:
            out.append({"method": r.method, "scenario": r.scenario, "seed": r.seed,
                        "metric": k, "difference": r.metrics[k] - base.metrics[k]})
    return out


def write_results_csv(results, path) -> None:
    """Tidy layout: one row per method x scenario x seed x metric."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "scenario", "seed", "metric", "value"])
        for r in results:
            vals = dict(r.metrics)
            vals["K"] = r.K
            vals["wall_time"] = r.wall_time
            vals.update({k: v for k, v in r.extra.items() if isinstance(v, (int, float))})
            for k, v in vals.items():
                w.writerow([r.method, r.scenario, r.seed, k, repr(float(v))])


def write_rows_csv(rows, path) -> None:
    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
