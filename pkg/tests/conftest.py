import numpy as np
import pytest

from nonignorable_hte.model import GaussianModelParams
from nonignorable_hte.sampler import PosteriorDraws
from nonignorable_hte.simulate import SimulationConfig, simulate


def frozen_draws(values, names=None, copies=4, latent=None):
    """PosteriorDraws whose every retained row equals ``values``."""
    if isinstance(values, GaussianModelParams):
        names = values.names()
        values = values.to_array()
    rows = np.tile(np.asarray(values, dtype=float), (copies, 1))
    return PosteriorDraws(
        names=tuple(names), parameter_draws=rows, warmup=0, iterations=copies, chain_id=0,
        acceptance_rates={}, seed=0, latent_draws=latent,
    )


@pytest.fixture(scope="session")
def truth():
    return GaussianModelParams.simulation_design()


@pytest.fixture(scope="session")
def small_study(truth):
    return simulate(SimulationConfig(400, truth, seed=11))


@pytest.fixture(scope="session")
def large_study(truth):
    return simulate(SimulationConfig(20_000, truth, seed=5))
