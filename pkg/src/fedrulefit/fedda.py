"""Federated dual averaging for l1-penalised logistic regression.

Coefficient vectors are laid out ``[intercept, rule terms..., linear terms...]``;
slot 0 is never penalised.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core import FedConfig
from .featurize import DesignMatrix

DIVERGENCE_LIMIT = 1e8


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class CoefficientVector:
    intercept: float
    rules: np.ndarray
    linear: np.ndarray

    @classmethod
    def from_vector(cls, w, n_rules: int) -> "CoefficientVector":
        w = np.asarray(w, dtype=float)
        return cls(float(w[0]), w[1:1 + n_rules].copy(), w[1 + n_rules:].copy())

    def to_vector(self) -> np.ndarray:
        return np.r_[self.intercept, self.rules, self.linear]

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.rules) + np.count_nonzero(self.linear))


@dataclass
class DualState:
    z: np.ndarray
    round: int = 0
    eta_tilde: float = 0.0


@dataclass
class ClientData:
    """One client's augmented design ``[1, X]``, labels and loss weight.

    ``scale`` multiplies the summed deviance: 1 for the plain sum, ``1/N_m``
    for the per-client mean.
    """

    A: np.ndarray
    y: np.ndarray
    scale: float = 1.0

    @classmethod
    def from_design(cls, design: DesignMatrix | np.ndarray, y, loss_scale: str = "sum") -> "ClientData":
        X = design.values if isinstance(design, DesignMatrix) else np.asarray(design, float)
        X = np.atleast_2d(X)
        A = np.empty((X.shape[0], X.shape[1] + 1))
        A[:, 0] = 1.0
        A[:, 1:] = X
        scale = 1.0 if loss_scale == "sum" else 1.0 / X.shape[0]
        return cls(A, np.asarray(y, dtype=float), scale)

    @property
    def n(self) -> int:
        return self.A.shape[0]


def _as_client(design, y) -> ClientData:
    return design if isinstance(design, ClientData) else ClientData.from_design(design, y)


def logistic_loss(w, design, y=None) -> float:
    """Summed logistic deviance; log(1 + e^t) evaluated as logaddexp(0, t)."""
    c = _as_client(design, y)
    eta = c.A @ np.asarray(w, dtype=float)
    return float(c.scale * np.sum(np.logaddexp(0.0, eta) - c.y * eta))


def _expit(t):
    return 0.5 * (1 + np.tanh(0.5 * t))


def logistic_loss_grad(w, design, y=None) -> np.ndarray:
    c = _as_client(design, y)
    eta = c.A @ np.asarray(w, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise DivergenceError("non-finite linear predictor")
    return c.A.T @ (c.scale * (_expit(eta) - c.y))


def prox_l1(z, threshold: float, penalized=None) -> np.ndarray:
    """argmin_w <-z, w> + threshold*||w||_1 + ||w||^2/2 with slot 0 left unpenalised.

    ``penalized`` overrides the default mask (every slot but the intercept).
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    z = np.asarray(z, dtype=float)
    w = np.sign(z) * np.maximum(np.abs(z) - threshold, 0.0)
    if penalized is None:
        if z.ndim and z.size:
            w[0] = z[0]
    else:
        w = np.where(penalized, w, z)
    return w


def client_step_scale(config: FedConfig, round_index: int, g: int) -> float:
    return (config.eta_server * config.eta_client * round_index * config.local_iters
            + config.eta_client * (g + 1))


def client_update(z_r, client: ClientData, config: FedConfig, round_index: int):
    """G local dual-averaging steps; returns the (start, end) dual pair."""
    z0 = np.asarray(z_r, dtype=float)
    z = z0.copy()
    A, y, lam, eta_c = client.A, client.y, config.lam, config.eta_client
    At = np.ascontiguousarray(A.T)
    step = eta_c * client.scale
    base = config.eta_server * eta_c * round_index * config.local_iters
    for g in range(config.local_iters):
        thr = (base + eta_c * (g + 1)) * lam
        # soft-threshold as z - clip(z): same values, fewer temporaries
        w = z - np.clip(z, -thr, thr)
        w[0] = z[0]
        z -= step * (At @ (expit(A @ w) - y))
    if not np.all(np.isfinite(z)):
        raise DivergenceError(f"non-finite dual vector at round {round_index}")
    return z0, z


def server_round(state: DualState, client_pairs, config: FedConfig, weights=None) -> DualState:
    """Average the clients' accumulated gradients and apply the server step.

    Each client's ``z_start - z_end`` is its accumulated (step-scaled)
    gradient, so ``z - eta_s * mean(z_start - z_end)`` moves downhill; with
    one client and ``eta_s = 1`` the server simply adopts ``z_end``.
    ``weights`` (summing to 1) replaces the plain 1/M average.
    """
    pairs = list(client_pairs)
    if not pairs:
        raise ValueError("no client updates to aggregate")
    d = state.z.shape
    if any(a.shape != d or b.shape != d for a, b in pairs):
        raise ValueError("client dual vectors differ in dimension from the server state")
    incr = np.array([a - b for a, b in pairs])
    if weights is None:
        delta = incr.mean(axis=0)
    else:
        delta = np.asarray(weights, dtype=float) @ incr
    r = state.round + 1
    return DualState(
        z=state.z - config.eta_server * delta,
        round=r,
        eta_tilde=config.eta_server * config.eta_client * r * config.local_iters,
    )


@dataclass
class SolveTrace:
    rows: list = field(default_factory=list)

    def record(self, round_index: int, delta_norm: float, nnz: int):
        self.rows.append((round_index, delta_norm, nnz))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "delta_norm", "nnz"])
            w.writerows(self.rows)


def solve(clients, config: FedConfig, n_rules: int = 0,
          trace: SolveTrace | None = None) -> CoefficientVector:
    """Run ``config.rounds`` FedDA rounds over ``clients`` and recover the primal.

    ``clients`` is a sequence of :class:`ClientData` (or ``(design, y)`` pairs)
    that share one column layout.
    """
    clients = [c if isinstance(c, ClientData)
               else ClientData.from_design(*c, loss_scale=config.loss_scale) for c in clients]
    if not clients:
        raise ValueError("no clients")
    d = clients[0].A.shape[1]
    if any(c.A.shape[1] != d for c in clients):
        raise ValueError("clients were featurised with different column layouts")
    weights = None
    if config.weighted_aggregation:
        n = np.array([c.n for c in clients], dtype=float)
        weights = n / n.sum()

    state = DualState(np.zeros(d))
    for r in range(config.rounds):
        pairs = [client_update(state.z, c, config, r) for c in clients]
        new = server_round(state, pairs, config, weights)
        if not np.all(np.isfinite(new.z)) or np.max(np.abs(new.z)) > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"dual vector exceeded {DIVERGENCE_LIMIT:g} at round {r}; "
                f"reduce eta_client ({config.eta_client}) or eta_server ({config.eta_server})"
            )
        if trace is not None:
            w = prox_l1(new.z, new.eta_tilde * config.lam)
            trace.record(r, float(np.linalg.norm(new.z - state.z) / config.eta_server),
                         int(np.count_nonzero(w[1:])))
        state = new
    w = prox_l1(state.z, state.eta_tilde * config.lam)
    return CoefficientVector.from_vector(w, n_rules)
