"""Posterior functionals of the Gaussian model.

All functionals are evaluated draw by draw and summarized by the posterior
mean, standard deviation and equal-tailed 95% interval. E[x | y0] is never
modeled parametrically: the sample covariates are reweighted by p(y0 | x).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special

from .core import gauss_hermite_rule, normal_logpdf
from .gmm import SingularWeightError
from .model import Dataset, GaussianModelParams

UNDERFLOW_LOG_WEIGHT = -700.0


class UndefinedEstimandError(ValueError):
    pass


@dataclass(frozen=True)
class EstimandSummary:
    mean: float
    sd: float
    ci95: tuple

    def __post_init__(self):
        if self.ci95[0] > self.ci95[1]:
            raise ValueError("ci95 lower bound exceeds upper bound")

    @classmethod
    def from_samples(cls, values) -> "EstimandSummary":
        v = np.asarray(values, dtype=float)
        lo, hi = np.percentile(v, [2.5, 97.5])
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        return cls(float(v.mean()), sd, (float(lo), float(hi)))

    def covers(self, value: float) -> bool:
        return self.ci95[0] <= value <= self.ci95[1]

    def to_dict(self) -> dict:
        return {"mean": self.mean, "sd": self.sd, "ci95": list(self.ci95)}


@dataclass(frozen=True)
class HteCurve:
    grid: np.ndarray
    mean: np.ndarray
    band95: np.ndarray
    flagged: np.ndarray
    per_draw: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("HTE grid must be strictly increasing")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["y0", "mean", "lo95", "hi95"])
        for g, m, (lo, hi), bad in zip(self.grid, self.mean, self.band95, self.flagged):
            if bad:
                w.writerow([repr(float(g)), "NA", "NA", "NA"])
            else:
                w.writerow([repr(float(g)), repr(float(m)), repr(float(lo)), repr(float(hi))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def curve_from_draws(grid, per_draw: np.ndarray, flagged, keep_draws: bool = False) -> HteCurve:
    flagged = np.asarray(flagged, dtype=bool)
    safe = np.where(flagged[None, :], 0.0, per_draw)
    lo, hi = np.percentile(safe, [2.5, 97.5], axis=0)
    mean = safe.mean(axis=0)
    mean[flagged] = np.nan
    band = np.column_stack([lo, hi])
    band[flagged] = np.nan
    return HteCurve(np.asarray(grid, dtype=float), mean, band, flagged, per_draw if keep_draws else None)


def _draw_rows(draws, max_draws: Optional[int]):
    rows = np.asarray(draws.parameter_draws)
    if max_draws is not None and rows.shape[0] > max_draws:
        idx = np.linspace(0, rows.shape[0] - 1, max_draws).round().astype(int)
        rows = rows[idx]
    return rows


def default_grid(data: Dataset, draws=None, size: int = 101) -> np.ndarray:
    """1st to 99th percentile of the observed y0 values plus posterior-mean latent y0's."""
    y0 = data.y[data.y0_observed]
    if draws is not None and getattr(draws, "latent_draws", None) is not None:
        y0 = np.concatenate([y0, draws.latent_draws.mean(axis=0)])
    lo, hi = np.percentile(y0, [1, 99])
    return np.linspace(lo, hi, size)


# --------------------------------------------------------------------------
# Gaussian-model pieces


def expected_treated_outcome(p, x, quad_order: int = 32) -> np.ndarray:
    """Per-unit integral of mu1(y0, x) against p(y0 | x), by Gauss-Hermite."""
    t00, t01, t10, t11, t12, t13, s0 = p[:7]
    rule = gauss_hermite_rule(quad_order)
    x = np.asarray(x, dtype=float)
    y0 = (t00 + t01 * x)[:, None] + s0 * rule.nodes[None, :]
    mu1 = t10 + t11 * x[:, None] + t12 * y0 + t13 * y0 * y0
    return mu1 @ rule.weights


def hte_values(p, x, grid) -> tuple:
    """E[y1 | y0] - y0 on ``grid`` for one parameter vector; also returns the underflow flags."""
    t00, t01, t10, t11, t12, t13, s0 = p[:7]
    grid = np.asarray(grid, dtype=float)
    logw = normal_logpdf(grid[:, None], (t00 + t01 * x)[None, :], s0)
    top = logw.max(axis=1)
    flagged = top < UNDERFLOW_LOG_WEIGHT
    w = np.exp(logw - top[:, None])
    ex = (w @ x) / w.sum(axis=1)
    return t10 + t11 * ex + t12 * grid + t13 * grid * grid - grid, flagged


def hte_curve(draws, data: Dataset, grid=None, max_draws: Optional[int] = None, keep_draws: bool = False) -> HteCurve:
    grid = default_grid(data, draws) if grid is None else np.asarray(grid, dtype=float)
    rows = _draw_rows(draws, max_draws)
    if rows.shape[0] == 0:
        raise UndefinedEstimandError("no posterior draws")
    x = data.x[:, 0]
    per = np.empty((rows.shape[0], grid.size))
    flagged = np.zeros(grid.size, dtype=bool)
    for k, p in enumerate(rows):
        per[k], f = hte_values(p, x, grid)
        flagged |= f
    return curve_from_draws(grid, per, flagged, keep_draws)


def normalized_odds(propensity) -> np.ndarray:
    p = np.asarray(propensity, dtype=float)
    if np.any(p >= 1.0):
        raise SingularWeightError("propensity equal to 1: odds weight is infinite")
    odds = p / (1.0 - p)
    return odds / odds.sum()


def odds_weights(data: Dataset, psi) -> np.ndarray:
    """Normalized odds p / (1 - p) on the r=1, z=0 units.

    Reweighting these units reproduces the (y0, x) law of the treated units.
    """
    p = psi.to_array() if isinstance(psi, GaussianModelParams) else np.asarray(psi, dtype=float)
    mask = data.offered_untreated
    x, y0 = data.x[mask, 0], data.y[mask]
    log_odds = p[8] + p[9] * x + p[10] * y0
    if np.any(special.expit(-log_odds) == 0.0):
        raise SingularWeightError("propensity numerically 1 on an untreated unit")
    return special.softmax(log_odds)


def posterior_estimands(draws, data: Dataset, aux=None, quad_order: int = 32, max_draws: Optional[int] = None) -> dict:
    """ATE, ATT and ATU summaries.

    ATE uses E[y0] from ``aux`` when given, otherwise the model-implied mean
    over the sample covariates. E[y0 | z=1] for ATT uses the augmented
    latents when the draws carry them, else odds weights. ATU is restricted
    to the untreated units of the offered arm.
    """
    treated = data.treated
    untreated = data.offered_untreated
    if not np.any(treated):
        raise UndefinedEstimandError("ATT is undefined without treated units")
    if not np.any(untreated):
        raise UndefinedEstimandError("ATU is undefined without untreated units")
    rows = np.asarray(draws.parameter_draws)
    latent = getattr(draws, "latent_draws", None)
    if max_draws is not None and rows.shape[0] > max_draws:
        idx = np.linspace(0, rows.shape[0] - 1, max_draws).round().astype(int)
        rows = rows[idx]
        latent = latent[idx] if latent is not None else None
    x = data.x[:, 0]
    x_u, y0_u = x[untreated], data.y[untreated]
    mean_y1_treated = data.y[treated].mean()
    mean_y0_untreated = y0_u.mean()
    ate, att, atu = (np.empty(rows.shape[0]) for _ in range(3))
    for k, p in enumerate(rows):
        ey1 = expected_treated_outcome(p, x, quad_order).mean()
        ey0 = aux.mean_y0 if aux is not None else float(np.mean(p[0] + p[1] * x))
        ate[k] = ey1 - ey0
        if latent is not None:
            ey0_treated = latent[k].mean()
        else:
            ey0_treated = odds_weights(data, p) @ y0_u
        att[k] = mean_y1_treated - ey0_treated
        mu1_u = p[2] + p[3] * x_u + p[4] * y0_u + p[5] * y0_u * y0_u
        atu[k] = mu1_u.mean() - mean_y0_untreated
    return {
        "ate": EstimandSummary.from_samples(ate),
        "att": EstimandSummary.from_samples(att),
        "atu": EstimandSummary.from_samples(atu),
        "per_draw": {"ate": ate, "att": att, "atu": atu},
    }


def policy_welfare(decision: Callable, draws, data: Dataset, quad_order: int = 32, max_draws: Optional[int] = None):
    """Welfare of treating exactly the units whose covariates satisfy ``decision``."""
    chosen = np.array([bool(decision(row)) for row in data.x], dtype=float)
    rows = _draw_rows(draws, max_draws)
    x = data.x[:, 0]
    values = np.empty(rows.shape[0])
    for k, p in enumerate(rows):
        e1 = expected_treated_outcome(p, x, quad_order)
        e0 = p[0] + p[1] * x
        values[k] = np.mean(chosen * e1 + (1.0 - chosen) * e0)
    return EstimandSummary.from_samples(values)
