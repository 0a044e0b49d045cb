"""Design matrices of rule indicators and scaled, Winsorized linear terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ClientPartition, Dataset
from .dp_hist import CutoffSet
from .rulegen import RuleSet

# Average SD of a rule indicator whose support is U(0, 1).
RULE_SD_SCALE = 0.4


def pooled_sd(per_client_sds, per_client_ns) -> float:
    s = np.asarray(per_client_sds, dtype=float)
    n = np.asarray(per_client_ns, dtype=float)
    w = n - 1
    if s.shape != n.shape:
        raise ValueError("one SD per client size is required")
    if not np.any(w > 0):
        raise ValueError("pooled SD needs at least one client with N_m >= 2")
    w = np.maximum(w, 0)
    return float(np.sqrt(np.sum(w * s**2) / np.sum(w)))


def pooled_column_sd(blocks) -> np.ndarray:
    """Column-wise pooled SD of per-client matrices (each client reports SDs and sizes only)."""
    blocks = [np.atleast_2d(b) for b in blocks]
    ns = np.array([b.shape[0] for b in blocks], dtype=float)
    w = np.maximum(ns - 1, 0)
    if not np.any(w > 0):
        raise ValueError("pooled SD needs at least one client with N_m >= 2")
    var = np.vstack([b.var(axis=0, ddof=1) if b.shape[0] > 1 else np.zeros(b.shape[1])
                     for b in blocks])
    return np.sqrt(w @ var / w.sum())


def winsorize(x, bounds):
    lo, hi = bounds
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise ValueError("lower Winsorization bound exceeds upper bound")
    return np.minimum(hi, np.maximum(lo, x))


@dataclass(frozen=True)
class LinearTermSpec:
    lower: np.ndarray
    upper: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        for name in ("lower", "upper", "sd"):
            a = np.asarray(getattr(self, name), dtype=float).copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.lower > self.upper):
            raise ValueError("Winsorization bounds out of order")

    @property
    def p(self) -> int:
        return self.sd.size

    @property
    def included(self) -> np.ndarray:
        """Covariate indices that carry a linear term (nonzero pooled SD)."""
        return np.flatnonzero(self.sd > 0)

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        keep = self.included
        W = winsorize(X[:, keep], (self.lower[keep], self.upper[keep]))
        return RULE_SD_SCALE * W / self.sd[keep]

    def to_list(self, names=None) -> list[dict]:
        return [
            {
                "covariate": j,
                "name": names[j] if names is not None else f"x{j + 1}",
                "lower": float(self.lower[j]),
                "upper": float(self.upper[j]),
                "pooled_sd": float(self.sd[j]),
                "included": bool(self.sd[j] > 0),
            }
            for j in range(self.p)
        ]

    @classmethod
    def from_list(cls, items) -> "LinearTermSpec":
        items = sorted(items, key=lambda d: d["covariate"])
        return cls(
            np.array([d["lower"] for d in items]),
            np.array([d["upper"] for d in items]),
            np.array([d["pooled_sd"] for d in items]),
        )


def linear_term_spec(partition: ClientPartition, cutoffs: CutoffSet) -> LinearTermSpec:
    """Bounds from the shared DP CDF; SD pooled from per-client raw-covariate SDs."""
    sd = pooled_column_sd([d.covariates for d in partition.clients])
    return LinearTermSpec(cutoffs.winsor_lower, cutoffs.winsor_upper, sd)


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    n_rules: int
    linear_covariates: tuple[int, ...]

    @property
    def shape(self):
        return self.values.shape

    def column_labels(self, rules: RuleSet, names) -> list[str]:
        labels = [r.display(names) for r in rules]
        labels += [names[j] for j in self.linear_covariates]
        return labels


def build_design(data: Dataset | np.ndarray, rules: RuleSet, lts: LinearTermSpec) -> DesignMatrix:
    X = data.covariates if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, float))
    if X.shape[1] != lts.p:
        raise ValueError(f"data have {X.shape[1]} covariates, linear spec expects {lts.p}")
    for r in rules:
        if max(r.covariates) >= X.shape[1]:
            raise ValueError(f"rule {r.display()} refers to a covariate beyond p={X.shape[1]}")
    values = np.hstack([rules.evaluate(X), lts.transform(X)])
    return DesignMatrix(values, len(rules), tuple(int(j) for j in lts.included))


def rule_support(rules: RuleSet, partition: ClientPartition) -> np.ndarray:
    """Fraction of all rows firing each rule, from per-client firing counts."""
    counts = np.zeros(len(rules))
    for d in partition.clients:
        counts += rules.evaluate(d.covariates).sum(axis=0)
    return counts / partition.n_total
