"""Command-line entry point: simulate, train, predict, explain, sweep.

Every subcommand reads a JSON run config (``--config``), validates it against
``CONFIG_SCHEMA`` before doing any work and writes its artifacts plus a
``metadata.json`` into the output directory.

Exit codes: 0 ok, 2 config or input error, 3 I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .core import ClientPartition, DataError, FedConfig, load_csv
from .dp_hist import DegenerateHistogram
from .fedda import DivergenceError
from .harness import (METHODS, paired_differences, preset_scenarios, simulate, summarize,
                      sweep_preprocess, write_results_csv, write_rows_csv)
from .interpret import format_rule_table, importance_report, subgroup_rates, top_rules
from .model import ModelFileError, fit_rulefit, load_model, predict_proba, save_model
from .rulegen import RuleGenError
from .synth import SCENARIO_KINDS, ScenarioSpec, UnattainablePrevalence

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

_NUMERIC_ERRORS = (DivergenceError, DegenerateHistogram,
                   UnattainablePrevalence, FloatingPointError)

_FED_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_trees": {"type": "integer", "minimum": 1},
        "mean_depth": {"type": "number", "minimum": 2},
        "shrinkage": {"type": "number", "minimum": 0, "maximum": 1},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "n_bins": {"type": "integer", "minimum": 2},
        "n_quantiles": {"type": "integer", "minimum": 1},
        "lam": {"type": "number", "minimum": 0},
        "eta_server": {"type": "number", "exclusiveMinimum": 0},
        "eta_client": {"type": "number", "exclusiveMinimum": 0},
        "rounds": {"type": "integer", "minimum": 1},
        "local_iters": {"type": "integer", "minimum": 1},
        "winsor_q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "rng_seed": {"type": "integer"},
        "bin_range": {"type": "array", "items": {"type": "number"},
                      "minItems": 2, "maxItems": 2},
        "dp_noise": {"type": "boolean"},
        "weighted_aggregation": {"type": "boolean"},
        "loss_scale": {"enum": ["sum", "mean"]},
    },
}

_SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": ["scenario1", "scenario2", "scenario3"]},
        "kind": {"enum": list(SCENARIO_KINDS)},
        "M": {"type": "integer", "minimum": 1},
        "proportions": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "model": {"enum": ["linear", "nonlinear"]},
        "N_total": {"type": "integer", "minimum": 2},
        "p": {"type": "integer", "minimum": 5},
    },
    "oneOf": [{"required": ["preset"]}, {"required": ["kind", "M", "proportions"]}],
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
        "fed_config": _FED_CONFIG_SCHEMA,
        "scenarios": {"type": "array", "items": _SCENARIO_SCHEMA, "minItems": 1},
        "replications": {"type": "integer", "minimum": 1},
        "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1,
                    "uniqueItems": True},
        "clients": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "outcome_column": {"type": "string"},
        "bin_ranges": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "number"},
                                     "minItems": 2, "maxItems": 2},
        },
        "flags": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dp_noise": {"type": "boolean"},
                "weighted_aggregation": {"type": "boolean"},
                "rescale_importance": {"type": "boolean"},
                "centralized_dp_noise": {"type": "boolean"},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_bins": {"type": "array", "items": {"type": "integer", "minimum": 2},
                           "minItems": 1},
                "n_quantiles": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                "minItems": 1},
                "baseline": {"type": "boolean"},
            },
            "required": ["n_bins", "n_quantiles"],
        },
        "explain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "top_k": {"type": "integer", "minimum": 0},
                "min_support": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}: "
                          f"{exc.msg}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from exc
    return cfg


def fed_config_from(cfg: dict, args) -> FedConfig:
    d = dict(cfg.get("fed_config", {}))
    flags = cfg.get("flags", {})
    for key in ("dp_noise", "weighted_aggregation"):
        if key in flags:
            d[key] = flags[key]
    if "bin_range" in d:
        d["bin_range"] = tuple(d["bin_range"])
    if args.no_dp_noise:
        d["dp_noise"] = False
    try:
        return FedConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"fed_config: {exc}") from exc


def run_seed(cfg: dict, args) -> int:
    if args.seed is not None:
        return args.seed
    return cfg.get("seed", 0)


def scenarios_from(cfg: dict) -> list[ScenarioSpec]:
    if "scenarios" not in cfg:
        raise ConfigError("config needs a 'scenarios' list")
    out = []
    for s in cfg["scenarios"]:
        s = dict(s)
        try:
            if "preset" in s:
                out.extend(preset_scenarios(s.pop("preset"), **s))
            else:
                out.append(ScenarioSpec(**s))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario {s}: {exc}") from exc
    return out


def out_dir_from(cfg: dict, args) -> Path:
    out = Path(args.out or cfg.get("out_dir") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_clients(cfg: dict) -> ClientPartition:
    if "clients" not in cfg:
        raise ConfigError("config needs a 'clients' list of CSV paths")
    outcome = cfg.get("outcome_column", "outcome")
    datasets = [load_csv(p, outcome) for p in cfg["clients"]]
    for p, d in zip(cfg["clients"][1:], datasets[1:]):
        if d.feature_names != datasets[0].feature_names:
            raise DataError(f"{p}: columns {list(d.feature_names)} differ from "
                            f"{cfg['clients'][0]}: {list(datasets[0].feature_names)}")
    return ClientPartition(tuple(datasets), tuple(cfg["clients"]))


def bin_ranges_for(cfg: dict, partition: ClientPartition, config: FedConfig) -> dict:
    """Declared per-column histogram ranges.

    Columns without one use ``config.bin_range``; the data are never scanned
    for a range since that would leak. A warning names those columns.
    """
    ranges = {k: tuple(v) for k, v in cfg.get("bin_ranges", {}).items()}
    unknown = set(ranges) - set(partition.feature_names)
    if unknown:
        raise ConfigError(f"bin_ranges names unknown columns: {sorted(unknown)}")
    for name, (lo, hi) in ranges.items():
        if not lo < hi:
            raise ConfigError(f"bin_ranges[{name!r}] must be increasing")
    missing = [n for n in partition.feature_names if n not in ranges]
    if missing:
        print(f"warning: no bin_ranges for {missing}; using {list(config.bin_range)}",
              file=sys.stderr)
    return ranges


def write_metadata(out: Path, command: str, cfg: dict, config: FedConfig | None,
                   seed: int | None, timings: dict, extra: dict | None = None) -> None:
    meta = {
        "command": command,
        "artifact_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": seed,
        "config": cfg,
        "fed_config": config.to_dict() if config is not None else None,
        "timings": timings,
    }
    meta.update(extra or {})
    (out / "metadata.json").write_text(json.dumps(meta, indent=2))


def read_feature_csv(path, feature_names) -> np.ndarray:
    """Covariate matrix in model column order; extra columns are ignored."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    missing = [n for n in feature_names if n not in header]
    if missing:
        raise DataError(f"{path}: missing feature column(s) {missing}")
    idx = [header.index(n) for n in feature_names]
    X = np.empty((len(rows) - 1, len(idx)))
    for r, row in enumerate(rows[1:]):
        for c, k in enumerate(idx):
            try:
                X[r, c] = float(row[k])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{r + 2}: bad value in column "
                                f"{feature_names[c]!r}") from exc
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite covariate values")
    return X


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    config = fed_config_from(cfg, args)
    scenarios = scenarios_from(cfg)
    seed = run_seed(cfg, args)
    out = out_dir_from(cfg, args)
    reps = cfg.get("replications", 20)
    seeds = [seed + r for r in range(reps)]
    methods = tuple(cfg.get("methods", METHODS))
    t0 = time.perf_counter()
    results = simulate(scenarios, config, seeds, methods, threads=args.threads,
                       centralized_dp_noise=cfg.get("flags", {}).get("centralized_dp_noise"))
    elapsed = time.perf_counter() - t0
    write_results_csv(results, out / "results.csv")
    write_rows_csv(summarize(results), out / "summary.csv")
    if "centralized" in methods:
        write_rows_csv(paired_differences(results), out / "differences.csv")
    write_metadata(out, "simulate", cfg, config, seed, {"total": elapsed},
                   {"seeds": seeds, "scenarios": [s.to_dict() for s in scenarios]})
    print(f"wrote {len(results)} runs to {out / 'results.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    config = fed_config_from(cfg, args)
    if "sweep" not in cfg:
        raise ConfigError("config needs a 'sweep' block with n_bins and n_quantiles")
    grid = cfg["sweep"]
    scenarios = scenarios_from(cfg) if "scenarios" in cfg else [ScenarioSpec.client_count(5)]
    seed = run_seed(cfg, args)
    seeds = [seed + r for r in range(cfg.get("replications", 20))]
    out = out_dir_from(cfg, args)
    t0 = time.perf_counter()
    results = []
    for sc in scenarios:
        results += sweep_preprocess(grid["n_bins"], grid["n_quantiles"], sc, config, seeds,
                                    grid.get("baseline", True), args.threads)
    elapsed = time.perf_counter() - t0
    write_results_csv(results, out / "results.csv")
    write_rows_csv(summarize(results), out / "summary.csv")
    write_metadata(out, "sweep", cfg, config, seed, {"total": elapsed},
                   {"seeds": seeds, "scenarios": [s.to_dict() for s in scenarios]})
    print(f"wrote {len(results)} sweep runs to {out / 'results.csv'}")
    return EXIT_OK


def _write_explanation(out: Path, model, partition: ClientPartition, cfg: dict) -> None:
    rescale = cfg.get("flags", {}).get("rescale_importance", True)
    opts = cfg.get("explain", {})
    report = importance_report(model, partition, rescale=rescale)
    (out / "importance.json").write_text(report.to_json())
    rows = top_rules(report, opts.get("top_k", 5), opts.get("min_support", 0.1))
    (out / "top_rules.txt").write_text(format_rule_table(rows) + "\n")
    sub = []
    for r in rows:
        rin, rout = subgroup_rates(model.rules[r["index"]], partition)
        sub.append({"rule": r["rule"], "in_rate": "" if rin is None else rin,
                    "out_rate": "" if rout is None else rout})
    write_rows_csv(sub, out / "subgroup_rates.csv")
    print(format_rule_table(rows))


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    config = fed_config_from(cfg, args)
    partition = load_clients(cfg)
    seed = run_seed(cfg, args)
    out = out_dir_from(cfg, args)
    ranges = bin_ranges_for(cfg, partition, config)
    model = fit_rulefit(partition, config, seed, bin_ranges=ranges)
    save_model(model, out / "model.json", config)
    _write_explanation(out, model, partition, cfg)
    write_metadata(out, "train", cfg, config, seed, model.metadata["timings"],
                   {"bin_ranges": {k: list(v) for k, v in ranges.items()},
                    "K": model.metadata["K"], "K_raw": model.metadata["K_raw"]})
    print(f"model with {len(model.rules)} rules written to {out / 'model.json'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    X = read_feature_csv(args.data, model.feature_names)
    prob = np.atleast_1d(predict_proba(model, X))
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "probability"])
        for i, v in enumerate(prob):
            w.writerow([i, repr(float(v))])
    print(f"wrote {prob.size} predictions to {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_explain(args) -> int:
    model = load_model(args.model)
    cfg = load_config(args.config) if args.config else {}
    if args.data:
        cfg = {**cfg, "clients": args.data}
    partition = load_clients(cfg)
    if partition.feature_names != model.feature_names:
        raise DataError(f"client columns {list(partition.feature_names)} do not match "
                        f"model features {list(model.feature_names)}")
    out = out_dir_from(cfg, args)
    _write_explanation(out, model, partition, cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrulefit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON run config")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--no-dp-noise", action="store_true",
                       help="disable histogram noise (testing only)")
        p.add_argument("--seed", type=int, help="override the config seed")

    for name, fn, helptext in (
        ("simulate", cmd_simulate, "run the simulation harness"),
        ("train", cmd_train, "train on client CSV files"),
        ("sweep", cmd_sweep, "bins x quantiles grid plus the unrestricted baseline"),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("predict", help="per-row probabilities from a saved model")
    common(p, config_required=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="CSV with the model's feature columns")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="importance report and subgroup rates")
    common(p, config_required=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", nargs="+", help="client CSVs (else taken from --config)")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, ModelFileError, RuleGenError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
