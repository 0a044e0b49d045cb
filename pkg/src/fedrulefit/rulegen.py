"""Per-client gradient boosting on shared cutoffs and rule extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ClientPartition, Dataset, FedConfig, rng_stream
from .dp_hist import CutoffSet

INF = math.inf

# Splits must reduce squared error by more than this to count as improving.
_MIN_GAIN = 1e-12


class RuleGenError(ValueError):
    pass


def _fmt(v: float) -> str:
    return f"{v:.4g}"


@dataclass(frozen=True)
class Rule:
    """Conjunction of ``lower <= x_j < upper`` conditions, one per covariate.

    ``conditions`` is kept sorted by covariate index so two rules that list the
    same intervals in a different order compare and hash equal.
    """

    conditions: tuple[tuple[int, float, float], ...]

    def __post_init__(self):
        merged: dict[int, tuple[float, float]] = {}
        for j, lo, hi in self.conditions:
            j, lo, hi = int(j), float(lo), float(hi)
            if j in merged:
                plo, phi = merged[j]
                lo, hi = max(lo, plo), min(hi, phi)
            merged[j] = (lo, hi)
        if not merged:
            raise ValueError("a rule needs at least one condition")
        for j, (lo, hi) in merged.items():
            if not lo < hi:
                raise ValueError(f"empty interval [{lo}, {hi}) on covariate {j}")
            if lo == -INF and hi == INF:
                raise ValueError(f"unbounded condition on covariate {j}")
        canon = tuple((j, *merged[j]) for j in sorted(merged))
        object.__setattr__(self, "conditions", canon)

    @classmethod
    def from_splits(cls, splits) -> "Rule":
        """Build from ``(j, c, goes_left)`` path steps; left means ``x_j < c``."""
        conds = [(j, -INF, c) if left else (j, c, INF) for j, c, left in splits]
        return cls(tuple(conds))

    @property
    def covariates(self) -> tuple[int, ...]:
        return tuple(j for j, _, _ in self.conditions)

    def evaluate(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        out = np.ones(X.shape[0], dtype=bool)
        for j, lo, hi in self.conditions:
            x = X[:, j]
            out &= (x >= lo) & (x < hi)
        return out[0] if single else out

    def display(self, names=None) -> str:
        parts = []
        for j, lo, hi in self.conditions:
            name = names[j] if names is not None else f"x{j + 1}"
            if lo > -INF:
                parts.append(f"{name} >= {_fmt(lo)}")
            if hi < INF:
                parts.append(f"{name} < {_fmt(hi)}")
        return " & ".join(parts)

    def to_dict(self, names=None) -> dict:
        return {
            "conditions": [
                {
                    "covariate": j,
                    "lower": lo if lo > -INF else None,
                    "upper": hi if hi < INF else None,
                }
                for j, lo, hi in self.conditions
            ],
            "display": self.display(names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Rule":
        return cls(tuple(
            (
                c["covariate"],
                -INF if c["lower"] is None else c["lower"],
                INF if c["upper"] is None else c["upper"],
            )
            for c in d["conditions"]
        ))


@dataclass
class TreeNode:
    weight: float = 0.0
    split_covariate: int | None = None
    split_value: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.n_leaves() + self.right.n_leaves()

    def iter_splits(self):
        if not self.is_leaf:
            yield self.split_covariate, self.split_value
            yield from self.left.iter_splits()
            yield from self.right.iter_splits()

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        self._fill(X, np.arange(X.shape[0]), out)
        return out

    def _fill(self, X, rows, out):
        if self.is_leaf:
            out[rows] = self.weight
            return
        go_left = X[rows, self.split_covariate] < self.split_value
        self.left._fill(X, rows[go_left], out)
        self.right._fill(X, rows[~go_left], out)


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...] = ()
    n_raw: int = 0

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def __getitem__(self, k):
        return self.rules[k]

    def evaluate(self, X) -> np.ndarray:
        """N x K 0/1 matrix of rule firings."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros((X.shape[0], len(self.rules)))
        for k, r in enumerate(self.rules):
            out[:, k] = r.evaluate(X)
        return out

    def to_list(self, names=None) -> list[dict]:
        return [r.to_dict(names) for r in self.rules]

    @classmethod
    def from_list(cls, items) -> "RuleSet":
        return cls(tuple(Rule.from_dict(d) for d in items))


def sample_leaves(mean_depth: float, rng: np.random.Generator) -> int:
    """Terminal-node count 2 + floor(w), w ~ Exponential(rate 1/(mean_depth - 2))."""
    if mean_depth < 2:
        raise ValueError("mean_depth must be >= 2")
    if mean_depth == 2:
        return 2
    return 2 + int(math.floor(rng.exponential(mean_depth - 2)))


class _SplitFinder:
    """Vectorised split search over a fixed candidate grid.

    Column ``t`` of ``Z`` is the indicator ``x_{j_t} < c_t``; columns are
    ordered by covariate then ascending cutoff, so ``argmax`` over equal gains
    picks the lowest covariate and lowest cutoff.
    """

    def __init__(self, X: np.ndarray, cutoffs: CutoffSet):
        cols, vals = [], []
        for j in range(X.shape[1]):
            for c in cutoffs[j] if j < len(cutoffs) else ():
                cols.append(j)
                vals.append(c)
        if not cols:
            raise RuleGenError("cutoff set is empty for every covariate")
        self.cov = np.array(cols)
        self.val = np.array(vals)
        self.Z = (X[:, self.cov] < self.val).astype(float)

    def best(self, rows: np.ndarray, r: np.ndarray):
        n = rows.size
        if n < 2:
            return None
        full = n == self.Z.shape[0]
        Zs = self.Z if full else self.Z[rows]
        rs = r if full else r[rows]
        nl = Zs.sum(axis=0)
        sl = rs @ Zs
        s = rs.sum()
        nr = n - nl
        sr = s - sl
        ok = (nl >= 1) & (nr >= 1)
        if not ok.any():
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(ok, sl**2 / nl + sr**2 / nr - s**2 / n, -np.inf)
        t = int(np.argmax(gain))
        if not gain[t] > _MIN_GAIN:
            return None
        go_left = Zs[:, t] > 0.5
        return float(gain[t]), int(self.cov[t]), float(self.val[t]), rows[go_left], rows[~go_left]


def _grow_tree(finder: _SplitFinder, r: np.ndarray, n_leaves: int):
    """Best-first growth to ``n_leaves`` leaves; returns (root, leaf row sets)."""
    root = TreeNode()
    all_rows = np.arange(r.size)
    leaves = [(root, all_rows, finder.best(all_rows, r))]
    while len(leaves) < n_leaves:
        cand = [i for i, (_, _, b) in enumerate(leaves) if b is not None]
        if not cand:
            break
        # earliest-created leaf wins gain ties
        i = max(cand, key=lambda i: (leaves[i][2][0], -i))
        node, _, (_, j, c, lrows, rrows) = leaves.pop(i)
        node.split_covariate, node.split_value = j, c
        node.left, node.right = TreeNode(), TreeNode()
        leaves.append((node.left, lrows, finder.best(lrows, r)))
        leaves.append((node.right, rrows, finder.best(rrows, r)))
    for node, rows, _ in leaves:
        node.weight = float(r[rows].mean())
    return root, [(node, rows) for node, rows, _ in leaves]


def _sigmoid(t):
    return 0.5 * (1 + np.tanh(0.5 * t))


def initial_log_odds(y) -> float:
    y = np.asarray(y)
    pos = int(y.sum())
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise RuleGenError("client data contain a single outcome class")
    return math.log(pos / neg)


def fit_local_gbdt(data: Dataset, cutoffs: CutoffSet, config: FedConfig, rng,
                   trace: list | None = None) -> list[TreeNode]:
    """Boost ``config.n_trees`` regression trees on logistic pseudo-residuals.

    If ``trace`` is a list, the training deviance after each tree is appended.
    """
    y = data.outcomes.astype(float)
    F = np.full(data.n, initial_log_odds(y))
    finder = _SplitFinder(data.covariates, cutoffs)
    trees = []
    for _ in range(config.n_trees):
        r = y - _sigmoid(F)
        T = sample_leaves(config.mean_depth, rng)
        root, leaves = _grow_tree(finder, r, T)
        for node, rows in leaves:
            F[rows] += config.shrinkage * node.weight
        trees.append(root)
        if trace is not None:
            trace.append(float(np.sum(np.logaddexp(0, F) - y * F)))
    return trees


def extract_rules(trees) -> list[Rule]:
    """One rule per non-root node: the conjunction of splits along its path."""
    rules = []

    def walk(node, path):
        if node.is_leaf:
            return
        j, c = node.split_covariate, node.split_value
        for child, left in ((node.left, True), (node.right, False)):
            step = path + [(j, c, left)]
            rules.append(Rule.from_splits(step))
            walk(child, step)

    for tree in trees:
        walk(tree, [])
    return rules


def dedup_rules(all_rules) -> RuleSet:
    all_rules = list(all_rules)
    unique = dict.fromkeys(all_rules)
    return RuleSet(tuple(unique), n_raw=len(all_rules))


def local_midpoint_cutoffs(data: Dataset) -> CutoffSet:
    """Every midpoint between consecutive distinct values (unrestricted splits)."""
    cuts = []
    for j in range(data.p):
        u = np.unique(data.covariates[:, j])
        cuts.append((u[:-1] + u[1:]) / 2)
    return CutoffSet(tuple(cuts), data.feature_names)


def client_rules(data: Dataset, cutoffs: CutoffSet | None, config: FedConfig, seed: int) -> list[Rule]:
    """Rules from one client's boosted trees; ``cutoffs=None`` means unrestricted splits."""
    if cutoffs is None:
        cutoffs = local_midpoint_cutoffs(data)
    trees = fit_local_gbdt(data, cutoffs, config, np.random.default_rng(seed))
    return extract_rules(trees)


def federated_rule_generation(partition: ClientPartition, cutoffs: CutoffSet | None,
                              config: FedConfig, seed: int, client_seeds=None) -> RuleSet:
    """Union of every client's rules with duplicates removed.

    Client ``m`` draws its tree sizes from ``client_seeds[m]`` when given,
    otherwise from the ``("rulegen", m)`` sub-stream of ``seed``.
    """
    if client_seeds is None:
        client_seeds = [int(rng_stream(seed, "rulegen", m).integers(2**63 - 1))
                        for m in range(partition.M)]
    pooled = []
    for cid, data, s in zip(partition.client_ids, partition.clients, client_seeds):
        try:
            pooled.extend(client_rules(data, cutoffs, config, s))
        except RuleGenError as exc:
            raise RuleGenError(f"{cid}: {exc}") from exc
    return dedup_rules(pooled)
