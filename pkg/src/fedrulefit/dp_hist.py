"""Laplace-noised client histograms and the shared cutoff candidates built from them.

Each client bins one covariate on a common grid, perturbs every bin count
with Lap(0, 1/epsilon) noise and ships only the noisy counts. The server
sums the histograms, forms an approximate CDF and reads off quantiles at
levels q/(Q+1). The same CDF also yields the Winsorization bounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ClientPartition, FedConfig

# Guards float round-off in cumulative sums such as 0.1 + 0.2 + 0.2 = 0.49999...
_CDF_TOL = 1e-12


class DegenerateHistogram(ValueError):
    """Aggregated histogram carries no mass after clamping."""


@dataclass(frozen=True)
class HistogramSpec:
    bin_edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.bin_edges, dtype=float)
        if e.ndim != 1 or e.size < 3:
            raise ValueError("need at least 2 bins (3 edges)")
        if not np.all(np.diff(e) > 0):
            raise ValueError("bin edges must be strictly increasing")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "bin_edges", e)

    @property
    def n_bins(self) -> int:
        return self.bin_edges.size - 1

    @classmethod
    def uniform(cls, lo: float, hi: float, n_bins: int) -> "HistogramSpec":
        return cls(np.linspace(lo, hi, n_bins + 1))


@dataclass(frozen=True)
class NoisyHistogram:
    counts: np.ndarray
    client_id: str = ""


@dataclass(frozen=True)
class CutoffSet:
    per_covariate: tuple[np.ndarray, ...]
    feature_names: tuple[str, ...] = ()
    winsor_lower: np.ndarray | None = None
    winsor_upper: np.ndarray | None = None

    def __post_init__(self):
        cleaned = []
        for c in self.per_covariate:
            c = np.unique(np.asarray(c, dtype=float))
            c.setflags(write=False)
            cleaned.append(c)
        object.__setattr__(self, "per_covariate", tuple(cleaned))
        if not self.feature_names:
            names = tuple(f"x{j + 1}" for j in range(len(cleaned)))
            object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return len(self.per_covariate)

    def __getitem__(self, j: int) -> np.ndarray:
        return self.per_covariate[j]

    @property
    def total(self) -> int:
        return sum(c.size for c in self.per_covariate)

    def to_json(self) -> str:
        return json.dumps(
            {n: c.tolist() for n, c in zip(self.feature_names, self.per_covariate)},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CutoffSet":
        d = json.loads(text)
        return cls(tuple(np.asarray(v, dtype=float) for v in d.values()), tuple(d))


def laplace_noise(scale: float, rng: np.random.Generator, size=None):
    """Lap(0, scale) draws by inverse-CDF transform of u ~ U(-1/2, 1/2)."""
    if scale <= 0:
        raise ValueError("Laplace scale must be > 0")
    u = rng.uniform(-0.5, 0.5, size)
    return laplace_from_uniform(u, scale)


def laplace_from_uniform(u, scale: float):
    u = np.asarray(u, dtype=float)
    # u == -0.5 would give log(0); it occurs with probability ~2**-53
    u = np.clip(u, np.nextafter(-0.5, 0.0), np.nextafter(0.5, 0.0))
    out = -scale * np.sign(u) * np.log1p(-2 * np.abs(u))
    return out if out.ndim else float(out)


def true_counts(values, spec: HistogramSpec) -> np.ndarray:
    """Exact bin counts; out-of-range values land in the first or last bin."""
    edges = spec.bin_edges
    b = np.searchsorted(edges, np.asarray(values, dtype=float), side="right") - 1
    b = np.clip(b, 0, spec.n_bins - 1)
    return np.bincount(b, minlength=spec.n_bins).astype(float)


def local_histogram(values, spec: HistogramSpec, epsilon: float, rng,
                    client_id: str = "", noise: bool = True) -> NoisyHistogram:
    counts = true_counts(values, spec)
    if noise and np.isfinite(epsilon):
        counts = counts + laplace_noise(1.0 / epsilon, rng, spec.n_bins)
    return NoisyHistogram(counts, client_id)


def aggregate_cdf(hists) -> np.ndarray:
    hists = list(hists)
    if not hists:
        raise ValueError("no histograms to aggregate")
    B = hists[0].counts.size
    if any(h.counts.size != B for h in hists):
        raise ValueError("histograms disagree on the number of bins")
    # clamp the summed bins, not each client's: per-client clamping adds
    # positive bias that grows with the number of clients
    total = np.maximum(np.sum([h.counts for h in hists], axis=0), 0.0)
    mass = total.sum()
    if not mass > 0:
        raise DegenerateHistogram("aggregated histogram has no positive mass")
    cdf = np.cumsum(total) / mass
    cdf[-1] = 1.0
    return cdf


def quantile_levels(Q: int) -> np.ndarray:
    return np.arange(1, Q + 1) / (Q + 1)


def cdf_quantile(cdf, spec: HistogramSpec, levels) -> np.ndarray:
    """Smallest bin right-edge whose CDF value reaches each level."""
    cdf = np.asarray(cdf, dtype=float)
    idx = np.searchsorted(cdf, np.asarray(levels, dtype=float) - _CDF_TOL, side="left")
    idx = np.minimum(idx, cdf.size - 1)
    return spec.bin_edges[idx + 1]


def quantile_cutoffs(cdf, spec: HistogramSpec, Q: int) -> np.ndarray:
    return np.unique(cdf_quantile(cdf, spec, quantile_levels(Q)))


def covariate_cdf(partition: ClientPartition, j: int, spec: HistogramSpec,
                  config: FedConfig, rng) -> np.ndarray:
    hists = [
        local_histogram(d.covariates[:, j], spec, config.epsilon, rng, cid, config.dp_noise)
        for cid, d in zip(partition.client_ids, partition.clients)
    ]
    return aggregate_cdf(hists)


def build_cutoff_set(partition: ClientPartition, config: FedConfig, rng,
                     bin_ranges=None) -> CutoffSet:
    """Shared cutoffs and Winsorization bounds for every covariate.

    ``bin_ranges`` optionally maps a covariate index or name to its own
    ``(lo, hi)`` histogram range; everything else uses ``config.bin_range``.
    """
    bin_ranges = bin_ranges or {}
    names = partition.feature_names
    cuts, lo_w, hi_w = [], [], []
    levels = [config.winsor_q, 1 - config.winsor_q]
    for j, name in enumerate(names):
        lo, hi = bin_ranges.get(name, bin_ranges.get(j, config.bin_range))
        spec = HistogramSpec.uniform(lo, hi, config.n_bins)
        cdf = covariate_cdf(partition, j, spec, config, rng)
        cuts.append(quantile_cutoffs(cdf, spec, config.n_quantiles))
        d_lo, d_hi = cdf_quantile(cdf, spec, levels)
        lo_w.append(d_lo)
        hi_w.append(d_hi)
    return CutoffSet(tuple(cuts), names, np.array(lo_w), np.array(hi_w))
