"""Datasets, client partitions and the federation hyperparameters."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed or unusable input data."""


class MissingValueError(DataError):
    pass


class NonNumericError(DataError):
    pass


class NonBinaryOutcomeError(DataError):
    pass


class EmptyFileError(DataError):
    pass


_MISSING_TOKENS = {"", "na", "nan", "null", "none", "n/a", "?"}


@dataclass(frozen=True)
class Dataset:
    outcomes: np.ndarray
    covariates: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        y = np.asarray(self.outcomes)
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim != 2:
            raise DataError(f"covariates must be 2-D, got shape {X.shape}")
        if X.shape[1] < 1:
            raise DataError("need at least one covariate")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DataError(
                f"outcome length {y.shape} does not match {X.shape[0]} covariate rows"
            )
        if not np.all((y == 0) | (y == 1)):
            raise NonBinaryOutcomeError("outcomes must be 0/1")
        if not np.all(np.isfinite(X)):
            raise MissingValueError("covariates contain NaN or infinite values")
        names = tuple(self.feature_names)
        if len(names) != X.shape[1]:
            raise DataError(
                f"{len(names)} feature names for {X.shape[1]} covariate columns"
            )
        y = y.astype(np.int8)
        y.setflags(write=False)
        X = X.copy()
        X.setflags(write=False)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.outcomes[rows], self.covariates[rows], self.feature_names)


@dataclass(frozen=True)
class ClientPartition:
    clients: tuple[Dataset, ...]
    client_ids: tuple[str, ...] = ()

    def __post_init__(self):
        clients = tuple(self.clients)
        if not clients:
            raise DataError("a partition needs at least one client")
        ids = tuple(self.client_ids) or tuple(f"client{m}" for m in range(len(clients)))
        if len(ids) != len(clients):
            raise DataError("client_ids length does not match number of clients")
        names = clients[0].feature_names
        for cid, d in zip(ids, clients):
            if d.feature_names != names:
                raise DataError(f"{cid}: feature names differ from {ids[0]}")
            if d.n < 1:
                raise DataError(f"{cid}: client holds no rows")
        object.__setattr__(self, "clients", clients)
        object.__setattr__(self, "client_ids", ids)

    @property
    def M(self) -> int:
        return len(self.clients)

    @property
    def n_total(self) -> int:
        return sum(d.n for d in self.clients)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.clients[0].feature_names

    @property
    def p(self) -> int:
        return self.clients[0].p

    def pooled(self) -> Dataset:
        """Row-stack of all clients (the centralized view)."""
        return Dataset(
            np.concatenate([d.outcomes for d in self.clients]),
            np.vstack([d.covariates for d in self.clients]),
            self.feature_names,
        )


@dataclass(frozen=True)
class FedConfig:
    n_trees: int = 333
    mean_depth: float = 2.0
    shrinkage: float = 0.01
    epsilon: float = 1.0
    n_bins: int = 100
    n_quantiles: int = 20
    lam: float = 0.01
    eta_server: float = 1.0
    eta_client: float = 0.01
    rounds: int = 300
    local_iters: int = 20
    winsor_q: float = 0.025
    rng_seed: int = 0
    bin_range: tuple[float, float] = (-6.0, 6.0)
    dp_noise: bool = True
    weighted_aggregation: bool = False
    loss_scale: str = "sum"

    def __post_init__(self):
        checks = [
            (self.n_trees >= 1, "n_trees must be >= 1"),
            (self.mean_depth >= 2, "mean_depth must be >= 2"),
            (0 <= self.shrinkage <= 1, "shrinkage must lie in [0, 1]"),
            (self.epsilon > 0, "epsilon must be > 0"),
            (self.n_bins >= 2, "n_bins must be >= 2"),
            (self.n_quantiles >= 1, "n_quantiles must be >= 1"),
            (self.lam >= 0, "lam must be >= 0"),
            (self.eta_server > 0, "eta_server must be > 0"),
            (self.eta_client > 0, "eta_client must be > 0"),
            (self.rounds >= 1, "rounds must be >= 1"),
            (self.local_iters >= 1, "local_iters must be >= 1"),
            (0 < self.winsor_q < 0.5, "winsor_q must lie in (0, 0.5)"),
            (self.bin_range[0] < self.bin_range[1], "bin_range must be increasing"),
            (self.loss_scale in ("sum", "mean"), "loss_scale must be 'sum' or 'mean'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        object.__setattr__(self, "bin_range", tuple(float(v) for v in self.bin_range))

    def replace(self, **changes) -> "FedConfig":
        d = asdict(self)
        d.update(changes)
        return FedConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bin_range"] = list(d["bin_range"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FedConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown FedConfig keys: {sorted(unknown)}")
        return cls(**d)


def rng_stream(seed: int, *names) -> np.random.Generator:
    """Independent generator for the named sub-stream of ``seed``.

    Names are hashed with crc32 so streams are stable across processes
    (Python's ``hash`` is salted per interpreter).
    """
    key = [zlib.crc32(str(n).encode()) for n in names]
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def sub_seed(seed: int, *names) -> int:
    return int(rng_stream(seed, *names).integers(0, 2**63 - 1))


def load_csv(path, outcome_column: str) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyFileError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if outcome_column not in header:
        raise DataError(f"{path}: outcome column {outcome_column!r} not in header")
    body = rows[1:]
    if not body:
        raise EmptyFileError(f"{path}: header only, no data rows")
    yi = header.index(outcome_column)
    names = [h for i, h in enumerate(header) if i != yi]
    if not names:
        raise DataError(f"{path}: no covariate columns")

    values = np.empty((len(body), len(header)))
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{r}: expected {len(header)} fields, got {len(row)}")
        for c, cell in enumerate(row):
            s = cell.strip()
            if s.lower() in _MISSING_TOKENS:
                raise MissingValueError(f"{path}:{r}: missing value in column {header[c]!r}")
            try:
                v = float(s)
            except ValueError:
                raise NonNumericError(
                    f"{path}:{r}: non-numeric value {s!r} in column {header[c]!r}"
                ) from None
            if not math.isfinite(v):
                raise MissingValueError(f"{path}:{r}: non-finite value in column {header[c]!r}")
            values[r - 2, c] = v

    y = values[:, yi]
    bad = ~np.isin(y, (0.0, 1.0))
    if bad.any():
        r = int(np.argmax(bad)) + 2
        raise NonBinaryOutcomeError(
            f"{path}:{r}: outcome {outcome_column!r} must be 0 or 1, got {y[bad][0]:g}"
        )
    X = np.delete(values, yi, axis=1)
    return Dataset(y.astype(np.int8), X, tuple(names))


def partition(data: Dataset, proportions, seed: int) -> ClientPartition:
    """Randomly split ``data`` into disjoint clients of the given size shares.

    Client ``m`` gets ``round(proportions[m] * N)`` rows; the last client
    absorbs whatever rounding leaves over.
    """
    props = np.asarray(proportions, dtype=float)
    if props.ndim != 1 or props.size < 1:
        raise ValueError("proportions must be a non-empty list")
    if np.any(props <= 0):
        raise ValueError("every proportion must be > 0")
    if abs(props.sum() - 1.0) > 1e-9:
        raise ValueError(f"proportions sum to {props.sum():.12g}, not 1")
    N = data.n
    sizes = [int(round(p * N)) for p in props[:-1]]
    sizes.append(N - sum(sizes))
    if min(sizes) < 1:
        raise ValueError(f"a client would receive no rows (sizes {sizes})")
    order = np.random.default_rng(seed).permutation(N)
    bounds = np.cumsum([0] + sizes)
    clients = tuple(data.subset(order[a:b]) for a, b in zip(bounds[:-1], bounds[1:]))
    return ClientPartition(clients)
