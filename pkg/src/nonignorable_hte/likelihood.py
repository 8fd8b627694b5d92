"""Observed-data and data-augmented log posteriors for the Gaussian model.

Unit branches:

* r=1, z=1 (y1 observed): log of the integral over y0 of
  p(y1 | y0, x) p(y0 | x) p(z=1 | y0, x), by Gauss-Hermite against p(y0 | x)
* r=1, z=0: log p(y0 | x) + log p(z=0 | y0, x)
* r=0:      log p(y0 | x)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    LOG_FLOOR,
    QuadratureRule,
    clamp_log,
    gauss_hermite_rule,
    log_logistic,
    normal_logpdf,
    pairwise_sum,
)
from .model import ContractError, Dataset, GaussianModelParams, ShapeError, UnitRecord

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_HALF_LOG_2_OVER_PI = 0.5 * np.log(2.0 / np.pi)


class NumericalError(ArithmeticError):
    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


# --------------------------------------------------------------------------
# Priors


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors: Normal(loc, scale) for coefficients, half-Normal(0, scale) for sd's.

    ``overrides`` maps a parameter name to ``("normal", loc, scale)``,
    ``("half_normal", scale)`` or ``("fixed", value)``; a fixed parameter is
    held at its value by the sampler.
    """

    coef_scale: float = 10.0
    sigma_scale: float = 5.0
    overrides: dict = field(default_factory=dict)

    def family(self, name: str):
        if name in self.overrides:
            return tuple(self.overrides[name])
        if name.startswith("sigma"):
            return ("half_normal", self.sigma_scale)
        return ("normal", 0.0, self.coef_scale)

    def log_density(self, names, values) -> float:
        total = 0.0
        for name, v in zip(names, values):
            fam = self.family(name)
            if fam[0] == "normal":
                _, loc, scale = fam
                total += -_HALF_LOG_2PI - np.log(scale) - 0.5 * ((v - loc) / scale) ** 2
            elif fam[0] == "half_normal":
                scale = fam[1]
                if v <= 0:
                    return -np.inf
                total += _HALF_LOG_2_OVER_PI - np.log(scale) - 0.5 * (v / scale) ** 2
            elif fam[0] == "fixed":
                if not np.isclose(v, fam[1], rtol=1e-12, atol=1e-12):
                    return -np.inf
            else:
                raise ValueError(f"unknown prior family {fam[0]!r} for {name}")
        return float(total)


    def fixed_values(self, names) -> dict:
        return {n: float(self.family(n)[1]) for n in names if self.family(n)[0] == "fixed"}


def log_prior(psi: GaussianModelParams, prior: PriorSpec) -> float:
    return prior.log_density(psi.names(), psi.to_array())


# --------------------------------------------------------------------------
# Vectorized evaluator


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    return safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))


class GaussianLikelihood:
    """Per-dataset evaluator; holds the branch index sets and quadrature rule.

    Parameter vectors follow ``GaussianModelParams.names()`` order.
    """

    def __init__(self, data: Dataset, quad: Optional[QuadratureRule] = None):
        if data.d != 1:
            raise ShapeError("the Gaussian model takes a single covariate")
        self.data = data
        self.quad = quad or gauss_hermite_rule(32)
        x = data.x[:, 0]
        self.idx_treated = np.flatnonzero(data.treated)
        self.idx_untreated = np.flatnonzero(data.offered_untreated)
        self.idx_arm0 = np.flatnonzero(data.control_arm)
        self.x_t, self.y1_t = x[self.idx_treated], data.y[self.idx_treated]
        self.x_u, self.y0_u = x[self.idx_untreated], data.y[self.idx_untreated]
        self.x_a, self.y0_a = x[self.idx_arm0], data.y[self.idx_arm0]
        self._nodes = np.asarray(self.quad.nodes)[None, :]
        self._w = np.asarray(self.quad.weights)
        self._nodes_col = np.asarray(self.quad.nodes)[:, None]
        self._log_w = np.log(self._w)[None, :]

    # branch terms -----------------------------------------------------------

    def treated_terms(self, p) -> np.ndarray:
        t00, t01, t10, t11, t12, t13, s0, s1, b0, b1, b2 = p
        # node-major layout (nodes x units) keeps the reductions along axis 0
        x, y1 = self.x_t[None, :], self.y1_t[None, :]
        y0 = (t00 + t01 * x) + s0 * self._nodes_col
        zres = (y1 - (t10 + t11 * x + t12 * y0 + t13 * y0 * y0)) / s1
        eta = b0 + b1 * x + b2 * y0
        # linear-space sum after removing the column maximum of the Gaussian
        # exponent; columns that still underflow fall back to the log-space sum
        e = -0.5 * zres * zres
        top = e.max(axis=0)
        with np.errstate(over="ignore"):
            g = 1.0 / (1.0 + np.exp(-eta))
        total = self._w @ (np.exp(e - top) * g)
        out = np.empty(total.size)
        ok = total > 1e-300
        out[ok] = top[ok] + np.log(total[ok])
        if not np.all(ok):
            bad = ~ok
            a = (e[:, bad] + log_logistic(eta[:, bad]) + self._log_w.T).T
            out[bad] = _logsumexp_rows(a)
        return out - _HALF_LOG_2PI - np.log(s1)

    def untreated_terms(self, p) -> np.ndarray:
        t00, t01, _, _, _, _, s0, _, b0, b1, b2 = p
        x, y0 = self.x_u, self.y0_u
        return normal_logpdf(y0, t00 + t01 * x, s0) + log_logistic(-(b0 + b1 * x + b2 * y0))

    def arm0_terms(self, p) -> np.ndarray:
        t00, t01, _, _, _, _, s0 = p[:7]
        return normal_logpdf(self.y0_a, t00 + t01 * self.x_a, s0)

    def unit_logliks(self, p) -> np.ndarray:
        """Per-unit log-likelihood contributions in dataset order (unclamped)."""
        out = np.empty(self.data.n)
        out[self.idx_treated] = self.treated_terms(p)
        out[self.idx_untreated] = self.untreated_terms(p)
        out[self.idx_arm0] = self.arm0_terms(p)
        return out

    def log_likelihood(self, p, diagnostics: Optional[dict] = None) -> float:
        terms, n_floor = clamp_log(self.unit_logliks(p))
        if diagnostics is not None:
            diagnostics["units_at_floor"] = n_floor
        return pairwise_sum(terms)

    # augmented --------------------------------------------------------------

    def augmented_log_likelihood(self, p, y0mis) -> float:
        y0mis = np.asarray(y0mis, dtype=float)
        if y0mis.shape != self.idx_treated.shape:
            raise ShapeError(f"y0mis has length {y0mis.size}, expected {self.idx_treated.size}")
        terms = np.concatenate([self.augmented_treated_terms(p, y0mis), self.untreated_terms(p), self.arm0_terms(p)])
        terms, _ = clamp_log(terms)
        return pairwise_sum(terms)

    def augmented_treated_terms(self, p, y0mis) -> np.ndarray:
        t00, t01, t10, t11, t12, t13, s0, s1, b0, b1, b2 = p
        x = self.x_t
        mu1 = t10 + t11 * x + t12 * y0mis + t13 * y0mis * y0mis
        return (
            normal_logpdf(self.y1_t, mu1, s1)
            + normal_logpdf(y0mis, t00 + t01 * x, s0)
            + log_logistic(b0 + b1 * x + b2 * y0mis)
        )


# --------------------------------------------------------------------------
# Unit-level public operations


def _x_scalar(x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != 1:
        raise ShapeError("the Gaussian model takes a single covariate")
    return float(x[0])


def treated_unit_loglik(y1: float, x, psi: GaussianModelParams, quad: Optional[QuadratureRule] = None) -> float:
    """log of the y0-integral of p(y1 | y0, x) p(y0 | x) p(z=1 | y0, x)."""
    quad = quad or gauss_hermite_rule(32)
    xs = _x_scalar(x)
    y0 = psi.mu0(xs) + psi.sigma0 * np.asarray(quad.nodes)
    a = (
        normal_logpdf(y1, psi.mu1(y0, xs), psi.sigma1)
        + log_logistic(psi.propensity_index(y0, xs))
        + np.log(np.asarray(quad.weights))
    )
    m = np.max(a)
    value = float(m + np.log(np.sum(np.exp(a - m)))) if np.isfinite(m) else float(m)
    if not np.isfinite(value):
        raise NumericalError(
            "treated-unit log-likelihood is not finite",
            {"y1": y1, "x": xs, "psi": psi.to_array().tolist(), "order": quad.order},
        )
    return value


def control_unit_loglik(y0: float, x, psi: GaussianModelParams) -> float:
    """log p(y0 | x) + log p(z=0 | y0, x)."""
    xs = _x_scalar(x)
    return float(normal_logpdf(y0, psi.mu0(xs), psi.sigma0) + log_logistic(-psi.propensity_index(y0, xs)))


def marginal_log_posterior(
    psi: GaussianModelParams,
    data: Dataset,
    prior: Optional[PriorSpec] = None,
    quad: Optional[QuadratureRule] = None,
    diagnostics: Optional[dict] = None,
) -> float:
    prior = prior or PriorSpec()
    lp = log_prior(psi, prior)
    if data.n == 0:
        return lp
    return GaussianLikelihood(data, quad).log_likelihood(psi.to_array(), diagnostics) + lp


def augmented_log_posterior(
    psi: GaussianModelParams, y0mis, data: Dataset, prior: Optional[PriorSpec] = None
) -> float:
    """Joint log posterior of (psi, y0mis); ``y0mis`` is aligned to the r=1, z=1 units in dataset order."""
    prior = prior or PriorSpec()
    lp = log_prior(psi, prior)
    if data.n == 0:
        return lp
    return GaussianLikelihood(data).augmented_log_likelihood(psi.to_array(), y0mis) + lp


def y0mis_full_conditional_logdensity(y0, unit: UnitRecord, psi: GaussianModelParams):
    """Unnormalized log density of a treated unit's missing y0 given psi."""
    if not (unit.r == 1 and unit.z == 1 and unit.y1 is not None):
        raise ContractError(f"unit {unit.id}: full conditional of y0 needs r=1, z=1 and observed y1")
    xs = _x_scalar(unit.x)
    y0 = np.asarray(y0, dtype=float)
    out = (
        log_logistic(psi.propensity_index(y0, xs))
        + normal_logpdf(unit.y1, psi.mu1(y0, xs), psi.sigma1)
        + normal_logpdf(y0, psi.mu0(xs), psi.sigma0)
    )
    return float(out) if out.ndim == 0 else out


__all__ = [
    "LOG_FLOOR",
    "GaussianLikelihood",
    "NumericalError",
    "PriorSpec",
    "augmented_log_posterior",
    "control_unit_loglik",
    "log_prior",
    "marginal_log_posterior",
    "treated_unit_loglik",
    "y0mis_full_conditional_logdensity",
]
