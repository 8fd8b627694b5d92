"""Scalar numerical primitives shared by the likelihood code.

Everything here is a pure function of its inputs. Densities are composed in
log space; the Gauss-Hermite and Gauss-Legendre rules are cached per order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

LOG_FLOOR = -745.0
EULER_GAMMA = float(np.euler_gamma)
_LOG_2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Input outside the domain of a primitive."""


class ConfigurationError(ValueError):
    """Invalid numerical configuration (quadrature order, grids, ...)."""


def logistic(t):
    """Overflow-safe ``1 / (1 + exp(-t))`` for scalars or arrays."""
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("logistic: non-finite input")
    out = special.expit(arr)
    return float(out) if out.ndim == 0 else out


def log_logistic(t):
    """``log(logistic(t))`` without cancellation; ``log(1 - logistic(t))`` is ``log_logistic(-t)``."""
    return -np.logaddexp(0.0, -np.asarray(t, dtype=float))


def normal_logpdf(y, mean, sd):
    y = np.asarray(y, dtype=float)
    z = (y - mean) / sd
    return -0.5 * _LOG_2PI - np.log(sd) - 0.5 * z * z


def normal_cdf(y):
    return special.ndtr(y)


def normal_logcdf(y):
    return special.log_ndtr(y)


def logsumexp(a, axis=None):
    return special.logsumexp(a, axis=axis)


def pairwise_sum(values) -> float:
    """Sum with a fixed reduction order.

    numpy reduces a contiguous float64 vector pairwise with split points that
    depend only on its length, so the result is reproducible bit for bit.
    """
    return float(np.sum(np.ascontiguousarray(values, dtype=float).ravel()))


def clamp_log(values, floor: float = LOG_FLOOR):
    """Clamp log terms at ``floor``; returns (clamped, number of clamped entries)."""
    v = np.asarray(values, dtype=float)
    hit = ~(v >= floor)  # also catches NaN and -inf
    if np.any(hit):
        v = np.where(hit, floor, v)
    return v, int(np.count_nonzero(hit))


# --------------------------------------------------------------------------
# Gumbel


@dataclass(frozen=True)
class GumbelEvaluation:
    log_density: float
    cdf: float
    location: float
    scale: float

    def quantile(self, p):
        return gumbel_quantile(p, self.location, self.scale)


def _check_scale(scale):
    if not np.all(np.asarray(scale) > 0):
        raise DomainError("Gumbel scale must be positive")


def gumbel_logpdf(y, location, scale):
    _check_scale(scale)
    u = (np.asarray(y, dtype=float) - location) / scale
    return -np.log(scale) - u - np.exp(-u)


def gumbel_cdf(y, location, scale):
    _check_scale(scale)
    u = (np.asarray(y, dtype=float) - location) / scale
    return np.exp(-np.exp(-u))


def gumbel_logcdf(y, location, scale):
    _check_scale(scale)
    u = (np.asarray(y, dtype=float) - location) / scale
    return -np.exp(-u)


def gumbel_quantile(p, location, scale):
    _check_scale(scale)
    p = np.asarray(p, dtype=float)
    return location - scale * np.log(-np.log(p))


def gumbel_distribution(y: float, location: float, scale: float) -> GumbelEvaluation:
    """Log-density and cdf of Gumbel(location, scale) at ``y``; the result also exposes the quantile."""
    _check_scale(scale)
    return GumbelEvaluation(
        log_density=float(gumbel_logpdf(y, location, scale)),
        cdf=float(gumbel_cdf(y, location, scale)),
        location=location,
        scale=scale,
    )


# --------------------------------------------------------------------------
# Quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule rescaled to the standard normal measure.

    ``nodes`` are standard-normal abscissae and ``weights`` sum to one, so
    ``E[f(mean + sd * Z)] ~= sum(weights * f(mean + sd * nodes))``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        if len(self.nodes) != self.order or len(self.weights) != self.order:
            raise ConfigurationError("nodes and weights must both have length == order")

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)

    def expectation(self, f, mean: float, sd: float) -> float:
        return float(np.sum(self.weights * f(mean + sd * self.nodes)))


@lru_cache(maxsize=None)
def _hermite(order: int):
    t, w = np.polynomial.hermite.hermgauss(order)
    nodes = math.sqrt(2.0) * t
    weights = w / math.sqrt(math.pi)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite_rule(order: int = 32) -> QuadratureRule:
    if order < 2:
        raise ConfigurationError(f"quadrature order must be >= 2, got {order}")
    nodes, weights = _hermite(int(order))
    return QuadratureRule(nodes=nodes, weights=weights, order=int(order))


def gauss_hermite_expectation(f, mean: float, sd: float, order: int = 32) -> float:
    """Approximate ``E[f(Y)]`` for ``Y ~ Normal(mean, sd^2)``."""
    if sd <= 0:
        raise DomainError("sd must be positive")
    return gauss_hermite_rule(order).expectation(f, mean, sd)


@lru_cache(maxsize=None)
def gauss_legendre_unit(order: int = 64):
    """Gauss-Legendre nodes and weights on (0, 1)."""
    if order < 2:
        raise ConfigurationError(f"quadrature order must be >= 2, got {order}")
    t, w = np.polynomial.legendre.leggauss(int(order))
    nodes = 0.5 * (t + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights
