import numpy as np
import pytest

from fedrulefit.core import ClientPartition, Dataset, FedConfig


def make_dataset(n=200, p=4, seed=0, model="linear"):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    eta = 2 * X[:, 0] - X[:, 1] if model == "linear" else 3 * (np.abs(X[:, 0]) < 0.7) - 1.5
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(np.int8)
    return Dataset(y, X, tuple(f"x{j + 1}" for j in range(p)))


@pytest.fixture
def small_config():
    return FedConfig(n_trees=20, rounds=30, local_iters=5)


@pytest.fixture
def two_clients():
    return ClientPartition((make_dataset(120, seed=1), make_dataset(80, seed=2)))
