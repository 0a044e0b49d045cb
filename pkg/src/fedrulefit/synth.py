"""Synthetic logistic data and the three federation scenarios."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ClientPartition, Dataset, partition, sub_seed

SCENARIO_KINDS = ("client_count", "size_imbalance", "outcome_imbalance")
MODELS = ("linear", "nonlinear")


class UnattainablePrevalence(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    M: int
    proportions: tuple[float, ...]
    model: str = "linear"
    N_total: int = 1000
    p: int = 10

    def __post_init__(self):
        object.__setattr__(self, "proportions", tuple(float(v) for v in self.proportions))
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"kind must be one of {SCENARIO_KINDS}, got {self.kind!r}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.M < 1 or len(self.proportions) != self.M:
            raise ValueError(f"need M={self.M} proportions, got {len(self.proportions)}")
        if self.p < 5:
            raise ValueError("the data-generating models need p >= 5")
        if self.kind == "outcome_imbalance":
            if not all(0 < v < 1 for v in self.proportions):
                raise ValueError("prevalences must lie strictly inside (0, 1)")
        elif abs(sum(self.proportions) - 1) > 1e-9:
            raise ValueError("size proportions must sum to 1")

    @classmethod
    def client_count(cls, M: int, model: str = "linear", **kw) -> "ScenarioSpec":
        return cls("client_count", M, (1.0 / M,) * M, model, **kw)

    def label(self) -> str:
        parts = [self.kind, f"M={self.M}"]
        if len(set(self.proportions)) > 1 or self.kind == "outcome_imbalance":
            parts.append("-".join(f"{v:g}" for v in self.proportions))
        parts.append(self.model)
        return "/".join(parts)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "M": self.M,
            "proportions": list(self.proportions),
            "model": self.model,
            "N_total": self.N_total,
            "p": self.p,
        }


def gen_covariates(N: int, p: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((N, p))


def linear_predictor(x, model: str) -> np.ndarray:
    """Log-odds under the linear or nonlinear generating model.

    Accepts a single p-vector or an (N, p) matrix.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 5:
        raise ValueError("the data-generating models need p >= 5")
    x1, x2, x3, x4, x5 = (x[..., j] for j in range(5))
    if model == "linear":
        return 5 * x1 - 4 * x2 + 3 * x3 - 2 * x4 + x5
    if model == "nonlinear":
        return (
            10 * np.exp(-2 * x1**2)
            - 10 * np.exp(-2 * x2**2)
            + 6 * np.sin(x3)
            - 4 * np.sin(x4)
            + 2 * np.sin(x5)
        )
    raise ValueError(f"unknown model {model!r}")


def _sigmoid(t):
    return 0.5 * (1 + np.tanh(0.5 * t))


def gen_outcomes(eta, seed: int) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ValueError("linear predictor must be finite")
    u = np.random.default_rng(seed).random(eta.shape)
    return (u < _sigmoid(eta)).astype(np.int8)


def _feature_names(p: int) -> tuple[str, ...]:
    return tuple(f"x{j + 1}" for j in range(p))


def _exact_prevalence_client(n: int, prevalence: float, spec: ScenarioSpec, seed: int) -> Dataset:
    n_pos = int(round(prevalence * n))
    n_neg = n - n_pos
    rng = np.random.default_rng(seed)
    budget = 1000 * n
    pos, neg = [], []
    got_pos = got_neg = drawn = 0
    batch = max(64, 2 * n)
    while got_pos < n_pos or got_neg < n_neg:
        if drawn >= budget:
            raise UnattainablePrevalence(
                f"could not reach prevalence {prevalence} on {n} rows "
                f"within {budget} draws"
            )
        k = min(batch, budget - drawn)
        X = rng.standard_normal((k, spec.p))
        y = (rng.random(k) < _sigmoid(linear_predictor(X, spec.model))).astype(np.int8)
        drawn += k
        take = X[y == 1][: n_pos - got_pos]
        pos.append(take)
        got_pos += len(take)
        take = X[y == 0][: n_neg - got_neg]
        neg.append(take)
        got_neg += len(take)
    X = np.vstack(pos + neg)
    y = np.r_[np.ones(n_pos, np.int8), np.zeros(n_neg, np.int8)]
    order = rng.permutation(n)
    return Dataset(y[order], X[order], _feature_names(spec.p))


def _gen_split(spec: ScenarioSpec, seed: int) -> ClientPartition:
    if spec.kind == "outcome_imbalance":
        base, rem = divmod(spec.N_total, spec.M)
        sizes = [base] * spec.M
        sizes[-1] += rem
        clients = tuple(
            _exact_prevalence_client(n, prev, spec, sub_seed(seed, "client", m))
            for m, (n, prev) in enumerate(zip(sizes, spec.proportions))
        )
        return ClientPartition(clients)
    X = gen_covariates(spec.N_total, spec.p, sub_seed(seed, "covariates"))
    y = gen_outcomes(linear_predictor(X, spec.model), sub_seed(seed, "outcomes"))
    data = Dataset(y, X, _feature_names(spec.p))
    return partition(data, spec.proportions, sub_seed(seed, "partition"))


def gen_scenario(spec: ScenarioSpec, seed: int) -> tuple[ClientPartition, ClientPartition]:
    """Independent (train, test) federations for one scenario replication."""
    return _gen_split(spec, sub_seed(seed, "train")), _gen_split(spec, sub_seed(seed, "test"))
