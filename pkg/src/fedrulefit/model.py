"""The fitted global RuleFit model: training pipeline, prediction, JSON I/O."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import ClientPartition, FedConfig, rng_stream
from .dp_hist import build_cutoff_set
from .featurize import LinearTermSpec, build_design, linear_term_spec, rule_support
from .fedda import ClientData, CoefficientVector, SolveTrace, solve
from .rulegen import RuleSet, federated_rule_generation

SCHEMA_VERSION = 1


class ModelFileError(ValueError):
    pass


@dataclass(frozen=True)
class RuleFitModel:
    rules: RuleSet
    linear_spec: LinearTermSpec
    coefficients: CoefficientVector
    supports: np.ndarray
    feature_names: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.coefficients.rules.size != len(self.rules):
            raise ValueError("rule coefficient count does not match the rule set")
        if self.coefficients.linear.size != self.linear_spec.included.size:
            raise ValueError("linear coefficient count does not match the linear terms")
        s = np.asarray(self.supports, dtype=float)
        if s.size != len(self.rules) or np.any((s < 0) | (s > 1)):
            raise ValueError("supports must be one value in [0, 1] per rule")
        object.__setattr__(self, "supports", s)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def p(self) -> int:
        return len(self.feature_names)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.p:
            raise ValueError(f"expected {self.p} covariates, got {X.shape[-1]}")
        D = build_design(np.atleast_2d(X), self.rules, self.linear_spec).values
        return self.coefficients.intercept + D @ np.r_[self.coefficients.rules,
                                                       self.coefficients.linear]


def predict_proba(model: RuleFitModel, x):
    """P(y=1 | x) for one covariate vector or an (N, p) matrix."""
    x = np.asarray(x, dtype=float)
    eta = model.decision_function(x)
    prob = 0.5 * (1 + np.tanh(0.5 * eta))
    return float(prob[0]) if x.ndim == 1 else prob


def fit_rulefit(partition: ClientPartition, config: FedConfig, seed: int | None = None,
                restrict_splits: bool = True, bin_ranges=None,
                trace: SolveTrace | None = None) -> RuleFitModel:
    """Pre-processing, rule generation and rule ensemble over one federation.

    With ``restrict_splits=False`` every client splits on its own sample
    midpoints instead of the shared DP cutoffs (the shared histograms still
    supply the Winsorization bounds).
    """
    seed = config.rng_seed if seed is None else seed
    timings = {}

    t0 = time.perf_counter()
    cutoffs = build_cutoff_set(partition, config, rng_stream(seed, "dp_hist"), bin_ranges)
    lts = linear_term_spec(partition, cutoffs)
    timings["preprocess"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rules = federated_rule_generation(
        partition, cutoffs if restrict_splits else None, config, seed
    )
    timings["rulegen"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    clients = [
        ClientData.from_design(build_design(d, rules, lts), d.outcomes, config.loss_scale)
        for d in partition.clients
    ]
    coef = solve(clients, config, n_rules=len(rules), trace=trace)
    timings["ensemble"] = time.perf_counter() - t0

    meta = {
        "seed": int(seed),
        "n_clients": partition.M,
        "client_sizes": [d.n for d in partition.clients],
        "K_raw": rules.n_raw,
        "K": len(rules),
        "restrict_splits": restrict_splits,
        "n_cutoffs": [int(c.size) for c in cutoffs.per_covariate],
        "timings": timings,
    }
    return RuleFitModel(rules, lts, coef, rule_support(rules, partition),
                        partition.feature_names, meta)


def model_to_dict(model: RuleFitModel, config: FedConfig | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": __version__,
        "config": config.to_dict() if config is not None else model.metadata.get("config"),
        "feature_names": list(model.feature_names),
        "rules": model.rules.to_list(model.feature_names),
        "linear_terms": model.linear_spec.to_list(model.feature_names),
        "coefficients": {
            "intercept": model.coefficients.intercept,
            "rules": model.coefficients.rules.tolist(),
            "linear": model.coefficients.linear.tolist(),
        },
        "supports": model.supports.tolist(),
        "metadata": {k: v for k, v in model.metadata.items() if k != "config"},
    }


def save_model(model: RuleFitModel, path, config: FedConfig | None = None) -> None:
    # json writes floats with repr(), which round-trips every double exactly
    Path(path).write_text(json.dumps(model_to_dict(model, config), indent=1))


def model_from_dict(d: dict) -> RuleFitModel:
    if not isinstance(d, dict):
        raise ModelFileError("model file must hold a JSON object")
    version = d.get("schema_version")
    if version is None:
        raise ModelFileError("model file lacks schema_version")
    if version != SCHEMA_VERSION:
        raise ModelFileError(
            f"model schema version {version} is not supported "
            f"(this build reads version {SCHEMA_VERSION})"
        )
    for key in ("feature_names", "rules", "linear_terms", "coefficients", "supports"):
        if key not in d:
            raise ModelFileError(f"model file lacks required key {key!r}")
    try:
        c = d["coefficients"]
        coef = CoefficientVector(float(c["intercept"]), np.array(c["rules"], dtype=float),
                                 np.array(c["linear"], dtype=float))
        meta = dict(d.get("metadata") or {})
        if d.get("config") is not None:
            meta["config"] = d["config"]
        return RuleFitModel(
            RuleSet.from_list(d["rules"]),
            LinearTermSpec.from_list(d["linear_terms"]),
            coef,
            np.array(d["supports"], dtype=float),
            tuple(d["feature_names"]),
            meta,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"corrupted model file: {exc}") from exc


def load_model(path) -> RuleFitModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(d)
