"""Comparison estimators: mean difference, IPWE, Wald/LATE and the c-statistic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from .model import Dataset, Setup

Z95 = 1.959963984540054


class EstimationError(ValueError):
    pass


class SeparationError(EstimationError):
    pass


class WeakInstrumentError(EstimationError):
    pass


@dataclass(frozen=True)
class BaselineResult:
    estimate: float
    se: float
    ci95: tuple
    extra: Optional[dict] = None

    @classmethod
    def normal(cls, estimate: float, se: float, **extra) -> "BaselineResult":
        se = float(max(se, 0.0))
        return cls(float(estimate), se, (estimate - Z95 * se, estimate + Z95 * se), extra or None)


# --------------------------------------------------------------------------
# Logistic regression by Newton-Raphson


def fit_logistic(features: np.ndarray, z: np.ndarray, tol: float = 1e-8, max_iter: int = 100, bound: float = 30.0):
    """Maximum-likelihood logistic coefficients; ``features`` must include the intercept column.

    Stops when the gradient sup-norm drops below ``tol`` or after ``max_iter``
    Newton steps. Coefficients beyond ``bound`` in absolute value signal
    (quasi-)separation.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(z, dtype=float)
    gamma = np.zeros(X.shape[1])
    for _ in range(max_iter):
        p = special.expit(X @ gamma)
        grad = X.T @ (y - p)
        if np.max(np.abs(grad)) < tol:
            break
        hess = (X * (p * (1 - p))[:, None]).T @ X
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise SeparationError("singular Hessian in logistic fit") from exc
        gamma = gamma + step
        if np.max(np.abs(gamma)) > bound:
            raise SeparationError(f"logistic coefficients diverged (|gamma| > {bound}): separation")
    return gamma


def quadratic_features(x: np.ndarray) -> np.ndarray:
    """Intercept, x and x^2 for every covariate column."""
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    return np.hstack([np.ones((x.shape[0], 1)), x, x * x])


# --------------------------------------------------------------------------
# Estimators


def _two_groups(data: Dataset, by: Optional[str]):
    if by is None:
        by = "arm" if data.setup is Setup.RCT_ONE_SIDED else "treatment"
    if by == "arm":
        return data.y[data.r], data.y[~data.r]
    if by == "treatment":
        return data.y[data.treated], data.y[data.offered_untreated]
    if by == "training_status":
        return data.y[data.treated], data.y[~data.treated]
    raise ValueError(f"unknown grouping {by!r}")


def mean_difference(data: Dataset, by: Optional[str] = None) -> BaselineResult:
    """Difference of mean realized outcomes between two groups, Welch standard error.

    ``by="arm"`` (default for the one-sided RCT) contrasts r=1 with r=0;
    ``"treatment"`` contrasts treated with untreated units among r=1;
    ``"training_status"`` counts r=0 units as untreated.
    """
    g1, g0 = _two_groups(data, by)
    if g1.size == 0 or g0.size == 0:
        raise EstimationError("mean difference needs both groups nonempty")
    est = g1.mean() - g0.mean()
    var = (g1.var(ddof=1) / g1.size if g1.size > 1 else 0.0) + (g0.var(ddof=1) / g0.size if g0.size > 1 else 0.0)
    return BaselineResult.normal(est, np.sqrt(var))


def ipwe_ate(
    data: Dataset,
    features: Callable = quadratic_features,
    propensity: Optional[np.ndarray] = None,
    clip: tuple = (0.01, 0.99),
) -> BaselineResult:
    """Horvitz-Thompson ATE under strong ignorability.

    The propensity p(z=1 | x) is a logistic regression on ``features(x)``.
    In the one-sided RCT every unit enters and r=0 units count as untreated;
    in observational setups only r=1 units (z recorded) enter. Passing
    ``propensity`` (aligned to the units used) skips the fit.
    """
    used = np.ones(data.n, dtype=bool) if data.setup is Setup.RCT_ONE_SIDED else data.r
    z = data.treated[used].astype(float)
    y = data.y[used]
    if propensity is None:
        X = features(data.x[used])
        gamma = fit_logistic(X, z)
        e = special.expit(X @ gamma)
    else:
        gamma = None
        e = np.asarray(propensity, dtype=float)
    e_c = np.clip(e, *clip)
    n_clamped = int(np.count_nonzero(e_c != e))
    terms = z * y / e_c - (1 - z) * y / (1 - e_c)
    est = terms.mean()
    se = terms.std(ddof=1) / np.sqrt(terms.size) if terms.size > 1 else 0.0
    return BaselineResult.normal(est, se, clamped=n_clamped, gamma=None if gamma is None else gamma.tolist())


def wald_late(data: Dataset) -> BaselineResult:
    """(E[y | r=1] - E[y | r=0]) / (E[z | r=1] - E[z | r=0]) with a delta-method standard error."""
    r = data.r
    if not np.any(r) or np.all(r):
        raise EstimationError("Wald estimator needs both arms nonempty")
    y1, y0 = data.y[r], data.y[~r]
    z1, z0 = data.z[r].astype(float), data.z[~r].astype(float)
    num = y1.mean() - y0.mean()
    den = z1.mean() - z0.mean()
    if abs(den) < 1e-12:
        raise WeakInstrumentError("compliance rates do not differ between arms")
    n1, n0 = y1.size, y0.size

    def _cov(a, b):
        return np.cov(a, b, ddof=1)[0, 1] if a.size > 1 else 0.0

    var_num = _cov(y1, y1) / n1 + _cov(y0, y0) / n0
    var_den = _cov(z1, z1) / n1 + _cov(z0, z0) / n0
    cov_nd = _cov(y1, z1) / n1 + _cov(y0, z0) / n0
    est = num / den
    var = (var_num - 2 * est * cov_nd + est**2 * var_den) / den**2
    return BaselineResult.normal(est, np.sqrt(max(var, 0.0)))


def c_statistic(scores, z) -> float:
    """Area under the ROC curve via the rank-sum formula, ties counted one half."""
    scores = np.asarray(scores, dtype=float)
    z = np.asarray(z).astype(bool)
    n1, n0 = int(z.sum()), int((~z).sum())
    if n1 == 0 or n0 == 0:
        raise EstimationError("c-statistic needs both classes present")
    ranks = stats.rankdata(scores)
    return float((ranks[z].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def propensity_c_statistic(data: Dataset, features: Callable = quadratic_features) -> float:
    """c-statistic of a logistic propensity fit of z on ``features(x)`` among r=1 units."""
    offered = data.r
    X = features(data.x[offered])
    z = data.z[offered]
    gamma = fit_logistic(X, z.astype(float))
    return c_statistic(X @ gamma, z)
