"""Shared builders for the test suite."""

import numpy as np
import pytest
from hypothesis import settings

from noisyrca.dag import Dag
from noisyrca.mechanism import (
    GaussianNoise,
    Hyperparams,
    make_generator_model,
)

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")

HYPER = Hyperparams(alpha=100.0, beta=1.0)


def diamond_dag() -> Dag:
    # 0 -> 1, 0 -> 2, 1 -> 3, 2 -> 3
    return Dag(parents=((), (0,), (0,), (1, 2)), names=("a", "b", "c", "d"))


def chain_dag(n: int) -> Dag:
    return Dag(
        parents=((),) + tuple((j - 1,) for j in range(1, n)),
        names=tuple(f"X{j}" for j in range(n)),
    )


def chain_model(weights, hyper: Hyperparams = HYPER, node_std: float = 1.0):
    """Generator model on a chain with the given per-edge mean weights."""
    n = len(weights) + 1
    dag = chain_dag(n)
    w = [np.asarray([], dtype=float)] + [np.asarray([float(v)]) for v in weights]
    return make_generator_model(
        dag, w, hyper, [GaussianNoise(std=node_std)] * n
    )


@pytest.fixture
def diamond():
    return diamond_dag()
