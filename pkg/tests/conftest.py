"""Shared fixtures: small ensembles reused across test modules."""

import numpy as np
import pytest

from msdelearn import SimulationConfig, simulate_ensemble, toy_model


@pytest.fixture(scope="session")
def toy_system():
    return toy_model(sigma=0.1)


@pytest.fixture(scope="session")
def toy_small(toy_system):
    """60 short toy trajectories; enough signal for smoke-level checks."""
    config = SimulationConfig(T=0.2, dt=0.004, M=60, seed=123,
                              initial=toy_system.initial)
    return simulate_ensemble(toy_system, config)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
