import numpy as np
import pytest

from nonignorable_hte.censored import TobitGumbelParams
from nonignorable_hte.core import logistic
from nonignorable_hte.model import Setup
from nonignorable_hte.simulate import SimulationConfig, simulate, stream


def test_same_config_same_dataset(truth):
    cfg = SimulationConfig(300, truth, seed=3)
    assert simulate(cfg).equals(simulate(cfg))
    assert not simulate(cfg).equals(simulate(SimulationConfig(300, truth, seed=4)))


def test_prefix_stability(truth):
    a = simulate(SimulationConfig(100, truth, seed=9))
    b = simulate(SimulationConfig(300, truth, seed=9))
    assert np.array_equal(a.x, b.x[:100]) and np.array_equal(a.y, b.y[:100])


def test_large_sample_moments(truth):
    n = 1_000_000
    data = simulate(SimulationConfig(n, truth, seed=1, arm_prob=1.0))
    x = data.x[:, 0]
    # y0 is hidden for treated units; rebuild every y0 from its own stream
    y0 = truth.mu0(x) + truth.sigma0 * stream(1, "y0").standard_normal(n)
    assert abs(y0.mean() - 1.0) < 0.004
    oracle = logistic(truth.propensity_index(y0, x)).mean()
    assert abs(data.z.mean() - oracle) < 0.003


def test_missingness_pattern(small_study):
    d = small_study
    assert not np.any(d.z & ~d.r)
    assert 0.4 < d.r.mean() < 0.6


def test_obs_macro_carries_aux(truth):
    d = simulate(SimulationConfig(200, truth, seed=2, setup=Setup.OBS_MACRO))
    assert d.aux is not None and d.r.all()
    assert d.aux.mean_y0 == truth.theta00


def test_tobit_censoring_fraction():
    p = TobitGumbelParams(0.0, (), 1.0, 0.0, 1.0, (), 1.0, -1.0, 0.0, 0.0, ())
    # the propensity ignores y0*, so units revealing y0 are a random subset
    d = simulate(SimulationConfig(1_000_000, p, seed=4))
    zero = d.y[d.y0_observed] == 0.0
    assert abs(zero.mean() - np.exp(-1.0)) < 0.003


def test_tobit_no_censoring_with_large_location():
    p = TobitGumbelParams(50.0, (0.1,), 1.0, 50.0, 1.0, (0.0,), 1.0, -1.0, 0.0, 0.0, (0.0,))
    d = simulate(SimulationConfig(2000, p, seed=4))
    assert np.all(d.y > 0)


def test_tobit_determinism_and_binary_covariates():
    p = TobitGumbelParams(0.5, (0.5, 0.2), 1.0, 0.3, 0.8, (0.2, 0.1), 0.3, 0.0, 0.5, -0.1, (0.3, -0.2))
    cfg = SimulationConfig(500, p, x_sd=1.0, seed=8, n_binary=1)
    a, b = simulate(cfg), simulate(cfg)
    assert a.equals(b)
    assert set(np.unique(a.x[:, 1])) <= {0.0, 1.0}
    assert np.all(a.y >= 0)


def test_config_validation(truth):
    with pytest.raises(ValueError):
        SimulationConfig(0, truth)
    with pytest.raises(ValueError):
        SimulationConfig(10, truth, arm_prob=0.0)
