"""Synthetic studies for the Gaussian design and the censored Tobit-Gumbel design.

Each variable is drawn from its own Philox stream keyed by ``(seed, tag)``;
unit ``i`` always consumes the ``i``-th value of every stream, so a dataset
depends only on the seed and the configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .censored import TobitGumbelParams
from .core import gumbel_quantile, logistic
from .model import Dataset, GaussianModelParams, Setup

_TAGS = {"x": 1, "xbin": 2, "y0": 3, "y1": 4, "z": 5, "r": 6}


def stream(seed: int, tag: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), _TAGS[tag]])))


@dataclass(frozen=True)
class SimulationConfig:
    n: int
    dgp: Union[GaussianModelParams, TobitGumbelParams]
    x_sd: float = 1.5
    seed: int = 0
    setup: Setup = Setup.RCT_ONE_SIDED
    arm_prob: float = 0.5
    n_binary: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 < self.arm_prob <= 1.0:
            raise ValueError("arm_prob must lie in (0, 1]")
        object.__setattr__(self, "setup", Setup(self.setup))


def _arms(cfg: SimulationConfig) -> np.ndarray:
    if cfg.setup is Setup.OBS_MACRO:
        return np.ones(cfg.n, dtype=bool)
    return stream(cfg.seed, "r").random(cfg.n) < cfg.arm_prob


def _assemble(cfg, x, y0, y1, z_latent, aux=None) -> Dataset:
    r = _arms(cfg)
    z = z_latent & r
    y = np.where(z, y1, y0)
    ids = tuple(str(i + 1) for i in range(cfg.n))
    return Dataset(ids, x, r, z, y, cfg.setup, aux)


def simulate_gaussian_study(cfg: SimulationConfig) -> Dataset:
    p = cfg.dgp
    if not isinstance(p, GaussianModelParams):
        raise TypeError("simulate_gaussian_study needs GaussianModelParams")
    n = cfg.n
    x = cfg.x_sd * stream(cfg.seed, "x").standard_normal(n)
    y0 = p.mu0(x) + p.sigma0 * stream(cfg.seed, "y0").standard_normal(n)
    y1 = p.mu1(y0, x) + p.sigma1 * stream(cfg.seed, "y1").standard_normal(n)
    z = stream(cfg.seed, "z").random(n) < logistic(p.propensity_index(y0, x))
    aux = None
    if cfg.setup is Setup.OBS_MACRO:
        from .gmm import AuxiliaryMoments, AuxSource

        mean_y0 = p.theta00
        aux = AuxiliaryMoments(
            mean_y0=mean_y0,
            mean_x=np.zeros(1),
            prob_z0=float(1.0 - np.mean(logistic(p.propensity_index(y0, x)))),
            moment_y0_sq=float(mean_y0**2 + p.theta01**2 * cfg.x_sd**2 + p.sigma0**2),
            source=AuxSource.MACRO_GIVEN,
        )
    return _assemble(cfg, x[:, None], y0, y1, z, aux)


def simulate_tobit_gumbel_study(cfg: SimulationConfig) -> Dataset:
    """Latent y0* ~ Gumbel(mu0(x), sigma0), y1* | y0* ~ Normal(mu1(y0*, x), sigma1^2); outcomes censored at 0."""
    p = cfg.dgp
    if not isinstance(p, TobitGumbelParams):
        raise TypeError("simulate_tobit_gumbel_study needs TobitGumbelParams")
    n, d = cfg.n, p.d
    n_cont = d - cfg.n_binary
    if n_cont < 0:
        raise ValueError("n_binary exceeds the covariate dimension")
    x = np.empty((n, d))
    if n_cont:
        x[:, :n_cont] = cfg.x_sd * stream(cfg.seed, "x").standard_normal((n, n_cont))
    if cfg.n_binary:
        x[:, n_cont:] = (stream(cfg.seed, "xbin").random((n, cfg.n_binary)) < 0.5).astype(float)
    u0 = stream(cfg.seed, "y0").random(n)
    y0_star = gumbel_quantile(u0, p.mu0(x), p.sigma0)
    y1_star = p.mu1(y0_star, x) + p.sigma1 * stream(cfg.seed, "y1").standard_normal(n)
    z = stream(cfg.seed, "z").random(n) < logistic(p.propensity_index(y0_star, x))
    return _assemble(cfg, x, np.maximum(y0_star, 0.0), np.maximum(y1_star, 0.0), z)


def simulate(cfg: SimulationConfig) -> Dataset:
    if isinstance(cfg.dgp, TobitGumbelParams):
        return simulate_tobit_gumbel_study(cfg)
    return simulate_gaussian_study(cfg)
