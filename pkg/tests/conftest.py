"""Shared fixtures: tiny networks and datasets that keep tests fast."""

import numpy as np
import pytest

from spikefed.network import Dense, NetworkConfig, init_params


@pytest.fixture
def tiny_net():
    """3 -> 4 -> 3 dense spiking net, T=6."""
    return NetworkConfig(layers=(Dense(3, 4), Dense(4, 3)), t_steps=6)


@pytest.fixture
def tiny_params(tiny_net):
    return init_params(tiny_net, seed=0)


@pytest.fixture
def tiny_batch():
    rng = np.random.default_rng(42)
    x = rng.normal(size=(8, 3)) + 1.0
    y = rng.integers(0, 3, size=8)
    return x, y
