"""Tobit-type model with a Gumbel latent untreated outcome, censored at zero.

Latent outcomes: y0* ~ Gumbel(xi0 + x'xi_x, sigma0) and
y1* | y0* ~ Normal(lambda0 + lambda1 y0* + x'lambda_x, sigma1^2); observed
outcomes are max(y*, 0). Compliance follows
logistic(beta0 + beta1 y0* + beta2 y0*^2 + x'beta_x).

Earnings-type outcomes should be rescaled by the caller (e.g. divided by
10000) before fitting; nothing here rescales.

Integrals over the Gumbel law use the inverse-cdf substitution y0* = Q(u)
with a 64-point Gauss-Legendre rule on (0, 1); truncated integrals over
y0* <= 0 use y0* = Q(u F(0)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .core import (
    EULER_GAMMA,
    clamp_log,
    gauss_legendre_unit,
    gumbel_logcdf,
    gumbel_logpdf,
    log_logistic,
    normal_logcdf,
    normal_logpdf,
    pairwise_sum,
)
from .gmm import SingularWeightError
from .model import ContractError, Dataset, ShapeError

GL_ORDER = 64
CHUNK = 192


class TruncationError(ArithmeticError):
    pass


class CensoredDataError(ContractError):
    pass


@dataclass(frozen=True)
class TobitGumbelParams:
    xi0: float
    xi_x: tuple
    sigma0: float
    lambda0: float
    lambda1: float
    lambda_x: tuple
    sigma1: float
    beta0: float
    beta1: float
    beta2: float
    beta_x: tuple

    def __post_init__(self):
        for name in ("xi_x", "lambda_x", "beta_x"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        if not (len(self.xi_x) == len(self.lambda_x) == len(self.beta_x)):
            raise ShapeError("xi_x, lambda_x and beta_x must have the same length")
        if not (self.sigma0 > 0 and self.sigma1 > 0):
            raise ContractError("sigma0 and sigma1 must be positive")

    @classmethod
    def synthetic_design(cls) -> "TobitGumbelParams":
        """One continuous covariate; roughly 15% of untreated outcomes sit at zero."""
        return cls(0.5, (0.5,), 1.0, 0.3, 0.8, (0.2,), 0.3, 0.0, 0.5, -0.1, (0.3,))

    @property
    def d(self) -> int:
        return len(self.xi_x)

    @staticmethod
    def names_for(d: int) -> tuple:
        xs = lambda stem: [f"{stem}{k + 1}" for k in range(d)]  # noqa: E731
        return tuple(
            ["xi0", *xs("xi_x"), "sigma0", "lambda0", "lambda1", *xs("lambda_x"), "sigma1",
             "beta0", "beta1", "beta2", *xs("beta_x")]
        )

    def names(self) -> tuple:
        return self.names_for(self.d)

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.xi0, *self.xi_x, self.sigma0, self.lambda0, self.lambda1, *self.lambda_x, self.sigma1,
             self.beta0, self.beta1, self.beta2, *self.beta_x],
            dtype=float,
        )

    @classmethod
    def from_array(cls, values, d: int) -> "TobitGumbelParams":
        v = np.asarray(values, dtype=float)
        if v.size != 3 * d + 8:
            raise ShapeError(f"expected {3 * d + 8} values for d={d}, got {v.size}")
        i = 0
        xi0 = v[i]; i += 1
        xi_x = v[i:i + d]; i += d
        s0 = v[i]; i += 1
        l0, l1 = v[i], v[i + 1]; i += 2
        lx = v[i:i + d]; i += d
        s1 = v[i]; i += 1
        b0, b1, b2 = v[i:i + 3]; i += 3
        bx = v[i:i + d]
        return cls(xi0, xi_x, s0, l0, l1, lx, s1, b0, b1, b2, bx)

    def mu0(self, x):
        return self.xi0 + np.asarray(x, dtype=float) @ np.asarray(self.xi_x)

    def mu1(self, y0_star, x):
        return self.lambda0 + self.lambda1 * np.asarray(y0_star, dtype=float) + np.asarray(x, dtype=float) @ np.asarray(self.lambda_x)

    def propensity_index(self, y0_star, x):
        y = np.asarray(y0_star, dtype=float)
        return self.beta0 + self.beta1 * y + self.beta2 * y * y + np.asarray(x, dtype=float) @ np.asarray(self.beta_x)


@dataclass
class _Unpacked:
    xi0: float
    xi_x: np.ndarray
    s0: float
    l0: float
    l1: float
    lx: np.ndarray
    s1: float
    b0: float
    b1: float
    b2: float
    bx: np.ndarray


def _unpack(v, d: int) -> _Unpacked:
    return _Unpacked(
        v[0], v[1:1 + d], v[1 + d], v[2 + d], v[3 + d], v[4 + d:4 + 2 * d], v[4 + 2 * d],
        v[5 + 2 * d], v[6 + 2 * d], v[7 + 2 * d], v[8 + 2 * d:8 + 3 * d],
    )


def censored_mean(mean, sd):
    """E[max(Y, 0)] for Y ~ Normal(mean, sd^2)."""
    mean = np.asarray(mean, dtype=float)
    t = mean / sd
    return mean * special.ndtr(t) + sd * np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)


def gumbel_moments(location, scale):
    """Mean and second moment of Gumbel(location, scale)."""
    m1 = location + EULER_GAMMA * scale
    return m1, m1 * m1 + (math.pi**2 / 6.0) * scale * scale


# --------------------------------------------------------------------------
# Likelihood


def _logsumexp_rows(a):
    m = a.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    return safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))


class CensoredLikelihood:
    """Vectorized branch evaluator for a fixed dataset (parameter vectors in ``TobitGumbelParams`` order)."""

    def __init__(self, data: Dataset, gl_order: int = GL_ORDER):
        if np.any(data.y < 0):
            raise CensoredDataError("censored model needs nonnegative outcomes")
        self.data = data
        self.d = data.d
        u, w = gauss_legendre_unit(gl_order)
        self.u = np.asarray(u)[None, :]
        self._w = np.asarray(w)
        self.log_w = np.log(self._w)[None, :]
        self._log_u = np.log(np.asarray(u))[:, None]
        self._gq = -np.log(-self._log_u)
        self._gq2 = self._gq**2
        t = data.treated
        self.t_pos = np.flatnonzero(t & (data.y > 0))
        self.t_zero = np.flatnonzero(t & (data.y == 0))
        c = data.offered_untreated
        self.c_pos = np.flatnonzero(c & (data.y > 0))
        self.c_zero = np.flatnonzero(c & (data.y == 0))
        a = data.control_arm
        self.a_pos = np.flatnonzero(a & (data.y > 0))
        self.a_zero = np.flatnonzero(a & (data.y == 0))

    def _nodes(self, q, idx):
        """Gumbel quantile nodes, node-major (nodes x units), over the full line."""
        mu0 = q.xi0 + self.data.x[idx] @ q.xi_x
        return mu0[None, :] + q.s0 * self._gq

    def _prop(self, q, y, x):
        return q.b0 + q.b1 * y + q.b2 * y * y + x @ q.bx

    def _sum_nodes(self, log_part, lin_part):
        """log sum_k w_k exp(log_part) lin_part over the node axis, guarding underflow."""
        top = log_part.max(axis=0)
        total = self._w @ (np.exp(log_part - top) * lin_part)
        out = np.empty(total.size)
        ok = total > 1e-300
        out[ok] = top[ok] + np.log(total[ok])
        if not np.all(ok):
            with np.errstate(divide="ignore"):
                a = log_part[:, ~ok] + np.log(lin_part[:, ~ok]) + self.log_w.T
            out[~ok] = _logsumexp_rows(a.T)
        return out

    def _treated_parts(self, q, idx):
        """mu1 and the propensity index on the nodes, built from unit and node parts.

        With y0* = m + s0 e on the shared standardized nodes e, mu1 is
        (per-unit) + l1 s0 e and the index is (per-unit) + (per-unit) e + b2 s0^2 e^2.
        """
        x = self.data.x[idx]
        m = q.xi0 + x @ q.xi_x
        e = self._gq
        mu1 = (q.l0 + q.l1 * m + x @ q.lx) + (q.l1 * q.s0) * e
        index = (q.b0 + q.b1 * m + q.b2 * m * m + x @ q.bx) + np.outer(e, (q.b1 + 2.0 * q.b2 * m) * q.s0) + (q.b2 * q.s0 * q.s0) * self._gq2
        return mu1, index

    def _chunked(self, fn, q, idx):
        # keep node x unit temporaries below glibc's mmap threshold (128 KiB);
        # larger blocks are mapped and unmapped on every call, which triples the cost
        if idx.size <= CHUNK:
            return fn(q, idx)
        return np.concatenate([fn(q, idx[k:k + CHUNK]) for k in range(0, idx.size, CHUNK)])

    def treated_positive(self, q) -> np.ndarray:
        return self._chunked(self._treated_positive, q, self.t_pos)

    def treated_zero(self, q) -> np.ndarray:
        return self._chunked(self._treated_zero, q, self.t_zero)

    def _treated_positive(self, q, idx) -> np.ndarray:
        mu1, index = self._treated_parts(q, idx)
        zres = (self.data.y[idx] - mu1) * (1.0 / q.s1)
        with np.errstate(over="ignore", under="ignore"):
            g = 1.0 / (1.0 + np.exp(-index))
            total = self._w @ (np.exp(-0.5 * zres * zres) * g)
        out = np.empty(total.size)
        ok = total > 1e-300
        out[ok] = np.log(total[ok])
        if not np.all(ok):
            out[~ok] = self._sum_nodes(-0.5 * zres[:, ~ok] ** 2, g[:, ~ok])
        return out - 0.5 * math.log(2.0 * math.pi) - math.log(q.s1)

    def _treated_zero(self, q, idx) -> np.ndarray:
        mu1, index = self._treated_parts(q, idx)
        with np.errstate(over="ignore"):
            g = 1.0 / (1.0 + np.exp(-index))
        mass = special.ndtr(-mu1 / q.s1)
        total = self._w @ (mass * g)
        out = np.empty(total.size)
        ok = total > 1e-300
        out[ok] = np.log(total[ok])
        if not np.all(ok):
            out[~ok] = self._sum_nodes(normal_logcdf(-mu1[:, ~ok] / q.s1), g[:, ~ok])
        return out

    def untreated_positive(self, q) -> np.ndarray:
        idx = self.c_pos
        x, y0 = self.data.x[idx], self.data.y[idx]
        mu0 = q.xi0 + x @ q.xi_x
        return gumbel_logpdf(y0, mu0, q.s0) + log_logistic(-self._prop(q, y0, x))

    def untreated_zero(self, q) -> np.ndarray:
        """log of the integral over y0* <= 0 of Gumbel(y0*) (1 - g(y0*))."""
        idx = self.c_zero
        x = self.data.x[idx]
        mu0 = q.xi0 + x @ q.xi_x
        log_f0 = gumbel_logcdf(0.0, mu0, q.s0)
        y0 = mu0[None, :] - q.s0 * np.log(-(self._log_u + log_f0[None, :]))
        keep = 1.0 / (1.0 + np.exp(np.clip(self._prop(q, y0, x), -700.0, 700.0)))
        return log_f0 + self._sum_nodes(np.zeros_like(y0), keep)

    def arm0_positive(self, q) -> np.ndarray:
        idx = self.a_pos
        mu0 = q.xi0 + self.data.x[idx] @ q.xi_x
        return gumbel_logpdf(self.data.y[idx], mu0, q.s0)

    def arm0_zero(self, q) -> np.ndarray:
        idx = self.a_zero
        mu0 = q.xi0 + self.data.x[idx] @ q.xi_x
        return gumbel_logcdf(0.0, mu0, q.s0)

    def unit_logliks(self, v) -> np.ndarray:
        q = _unpack(np.asarray(v, dtype=float), self.d)
        out = np.empty(self.data.n)
        out[self.t_pos] = self.treated_positive(q)
        out[self.t_zero] = self.treated_zero(q)
        out[self.c_pos] = self.untreated_positive(q)
        out[self.c_zero] = self.untreated_zero(q)
        out[self.a_pos] = self.arm0_positive(q)
        out[self.a_zero] = self.arm0_zero(q)
        return out

    def log_likelihood(self, v) -> float:
        terms, _ = clamp_log(self.unit_logliks(v))
        return pairwise_sum(terms)

    def augmented_zero_terms(self, q, latent) -> np.ndarray:
        """Untreated zero-outcome units with their latent y0* <= 0 filled in."""
        x = self.data.x[self.c_zero]
        mu0 = q.xi0 + x @ q.xi_x
        return gumbel_logpdf(latent, mu0, q.s0) + log_logistic(-self._prop(q, latent, x))

    def augmented_log_likelihood(self, v, latent) -> float:
        q = _unpack(np.asarray(v, dtype=float), self.d)
        parts = [
            self.treated_positive(q), self.treated_zero(q), self.untreated_positive(q),
            self.augmented_zero_terms(q, latent), self.arm0_positive(q), self.arm0_zero(q),
        ]
        terms, _ = clamp_log(np.concatenate(parts))
        return pairwise_sum(terms)


def _single_unit_dataset(unit, d: int) -> Dataset:
    from .model import Setup

    return Dataset.from_units([unit], Setup.RCT_ONE_SIDED, None, d)


def censored_unit_loglik(unit, psi: TobitGumbelParams, gl_order: int = GL_ORDER) -> float:
    """Log-likelihood contribution of one unit, picking the branch from its outcome pattern."""
    observed = unit.y1 if (unit.r and unit.z) else unit.y0
    if observed is not None and observed < 0:
        raise CensoredDataError(f"unit {unit.id}: negative outcome {observed}")
    data = _single_unit_dataset(unit, psi.d)
    return float(CensoredLikelihood(data, gl_order).unit_logliks(psi.to_array())[0])


# --------------------------------------------------------------------------
# Moments


def latent_moments(psi_values, x, d: int) -> tuple:
    """Model-implied E[y0*] and E[y0*^2], averaged over the rows of ``x``."""
    q = _unpack(np.asarray(psi_values, dtype=float), d)
    m1, m2 = gumbel_moments(q.xi0 + np.asarray(x, dtype=float) @ q.xi_x, q.s0)
    return float(np.mean(m1)), float(np.mean(m2))


def _censored_rows(y0s, x, q, prob_z0, mean_x, ey, ey2) -> np.ndarray:
    index = q.b0 + q.b1 * y0s + q.b2 * y0s * y0s + x @ q.bx
    p0 = np.clip(special.expit(-index), 1e-12, 1.0 - 1e-12)
    inv = 1.0 / p0
    return np.column_stack([inv - 1.0 / prob_z0, (x - mean_x) * inv[:, None], (y0s - ey) * inv, (y0s * y0s - ey2) * inv])


def censored_moment_vector(y0_star: float, x, psi: TobitGumbelParams, aux, mean_y0_star=None, mean_y0_star_sq=None, control_x=None) -> np.ndarray:
    """Length d+3 moment vector for one unit.

    E[y0*] and E[y0*^2] come from the arguments when given, otherwise they are
    the model-implied moments averaged over ``control_x``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    aux.require(x.size)
    if special.expit(-psi.propensity_index(y0_star, x[None, :])[0]) == 0.0:
        raise SingularWeightError("propensity is numerically 1")
    if mean_y0_star is None or mean_y0_star_sq is None:
        if control_x is None:
            raise ContractError("need control-arm covariates or explicit E[y0*], E[y0*^2]")
        mean_y0_star, mean_y0_star_sq = latent_moments(psi.to_array(), control_x, psi.d)
    q = _unpack(psi.to_array(), psi.d)
    return _censored_rows(np.array([float(y0_star)]), x[None, :], q, aux.prob_z0, aux.mean_x, mean_y0_star, mean_y0_star_sq)[0]


# --------------------------------------------------------------------------
# Truncated Gumbel draws and the HTE curve


def truncated_gumbel_draw(location, scale, upper, rng, unit=None):
    """Inverse-cdf draw from Gumbel(location, scale) restricted to (-inf, upper]."""
    log_c = gumbel_logcdf(upper, location, scale)
    if np.any(np.isneginf(log_c)):
        who = "" if unit is None else f" for unit {unit}"
        raise TruncationError(f"Gumbel cdf underflows at the truncation point{who}")
    location = np.asarray(location, dtype=float)
    shape = np.broadcast(location, np.asarray(upper)).shape
    u = rng.random(shape) if shape else rng.random()
    # quantile(u * F(upper)) written in log space: -log(-log(u) - log F(upper))
    out = location - scale * np.log(-(np.log(u) + log_c))
    return np.minimum(out, upper)


@dataclass(frozen=True)
class CensoredHte:
    curve: object
    atom: object


def _hte_positive(q, x, grid):
    """E[max(y1*, 0) | y0* = g] - g with x reweighted by the Gumbel density."""
    logw = gumbel_logpdf(grid[:, None], (q.xi0 + x @ q.xi_x)[None, :], q.s0)
    top = logw.max(axis=1)
    flagged = top < -700.0
    w = np.exp(logw - top[:, None])
    w /= w.sum(axis=1, keepdims=True)
    mu1 = q.l0 + q.l1 * grid[:, None] + (x @ q.lx)[None, :]
    return (w * censored_mean(mu1, q.s1)).sum(axis=1) - grid, flagged


def censored_atom(v, x, d: int, gl_order: int = GL_ORDER) -> float:
    """E[max(y1*, 0) | y0* <= 0]: the treatment effect at the censoring point."""
    q = _unpack(np.asarray(v, dtype=float), d)
    u, w = gauss_legendre_unit(gl_order)
    mu0 = q.xi0 + x @ q.xi_x
    log_f0 = gumbel_logcdf(0.0, mu0, q.s0)
    y0 = mu0[:, None] - q.s0 * np.log(-(np.log(np.asarray(u))[None, :] + log_f0[:, None]))
    mu1 = q.l0 + q.l1 * y0 + (x @ q.lx)[:, None]
    inner = censored_mean(mu1, q.s1) @ np.asarray(w)
    f0 = np.exp(log_f0)
    if f0.sum() == 0.0:
        raise TruncationError("no probability mass at or below zero")
    return float(f0 @ inner / f0.sum())


def censored_hte_curve(draws, data: Dataset, grid=None, max_draws: Optional[int] = None) -> CensoredHte:
    """HTE curve for y0 > 0 plus a separate summary of the atom at y0 = 0."""
    from .estimands import EstimandSummary, _draw_rows, curve_from_draws

    if grid is None:
        pos = data.y[data.y0_observed & (data.y > 0)]
        lo, hi = np.percentile(pos, [1, 99])
        grid = np.linspace(lo, hi, 101)
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0):
        raise ValueError("the continuous part of the curve lives on y0 > 0")
    rows = _draw_rows(draws, max_draws)
    d = data.d
    per = np.empty((rows.shape[0], grid.size))
    atoms = np.empty(rows.shape[0])
    flagged = np.zeros(grid.size, dtype=bool)
    for k, v in enumerate(rows):
        q = _unpack(v, d)
        per[k], f = _hte_positive(q, data.x, grid)
        flagged |= f
        atoms[k] = censored_atom(v, data.x, d)
    return CensoredHte(curve_from_draws(grid, per, flagged), EstimandSummary.from_samples(atoms))


# --------------------------------------------------------------------------
# Quasi-Bayes target with latent y0* for zero-outcome untreated units


def censored_initial(data: Dataset) -> TobitGumbelParams:
    """Crude starting point from moment matching and least squares."""
    d = data.d
    obs = data.y0_observed
    A = np.column_stack([np.ones(obs.sum()), data.x[obs]])
    coef, *_ = np.linalg.lstsq(A, data.y[obs], rcond=None)
    s0 = max(float(np.std(data.y[obs] - A @ coef)) * math.sqrt(6.0) / math.pi, 0.05)
    t = data.treated
    B = np.column_stack([np.ones(t.sum()), data.x[t]])
    c1, *_ = np.linalg.lstsq(B, data.y[t], rcond=None)
    s1 = max(float(np.std(data.y[t] - B @ c1)), 0.05)
    from .baselines import fit_logistic

    offered = data.r
    gamma = fit_logistic(np.column_stack([np.ones(offered.sum()), data.x[offered]]), data.z[offered].astype(float))
    return TobitGumbelParams(
        coef[0] - EULER_GAMMA * s0, coef[1:], s0, c1[0], 0.0, c1[1:], s1, gamma[0], 0.0, 0.0, gamma[1:],
    )


class CensoredTarget:
    """Quasi-posterior for the censored model.

    Latent y0* are carried for the untreated zero-outcome units of the offered
    arm, because the moment function needs y0* there. Control-arm zeros and
    treated units are integrated out by quadrature.
    """

    def __init__(self, spec, gmm_weight=None):
        from .sampler import TargetKind

        if spec.target is not TargetKind.QUASI_BAYES:
            raise ContractError("the censored model is fit with the QUASI_BAYES target only")
        data = spec.data
        self.spec = spec
        self.data = data
        self.d = data.d
        self.prior = spec.prior
        self.lik = CensoredLikelihood(data)
        self.names = TobitGumbelParams.names_for(self.d)
        self.log_scale = np.array([n.startswith("sigma") for n in self.names])
        aux = spec.aux
        aux.require(self.d)
        self.aux = aux
        self.k = self.d + 3
        sub = np.flatnonzero(data.offered_untreated)
        if sub.size == 0:
            raise ContractError("GMM moment subsample (r=1, z=0) is empty")
        self.sub_x = data.x[sub]
        self.sub_y = data.y[sub].copy()
        self.sub_latent = np.flatnonzero(data.y[sub] == 0)  # positions inside the subsample
        self.latent_x = self.sub_x[self.sub_latent]
        arm0 = data.control_arm
        self.moment_x = data.x[arm0] if np.any(arm0) else data.x
        self.n_sub = sub.size
        if spec.gmm.n0 == "control_arm":
            self.n0 = int(arm0.sum())
            if self.n0 == 0:
                raise ContractError("n0='control_arm' but the data has no r=0 units")
        else:
            self.n0 = self.n_sub
        self.w = gmm_weight if gmm_weight is not None else spec.gmm.matrix(self.k)

    has_latent = True

    def initial(self):
        psi = self.spec.init if self.spec.init is not None else censored_initial(self.data)
        theta = psi.to_array()
        q = _unpack(theta, self.d)
        mu0 = q.xi0 + self.latent_x @ q.xi_x
        log_f0 = gumbel_logcdf(0.0, mu0, q.s0)
        latent = np.minimum(mu0 - q.s0 * np.log(-(math.log(0.5) + log_f0)), 0.0)
        return theta, latent

    def _y0s(self, latent):
        y = self.sub_y.copy()
        y[self.sub_latent] = latent
        return y

    def moment_rows(self, theta, latent) -> np.ndarray:
        q = _unpack(np.asarray(theta, dtype=float), self.d)
        ey, ey2 = latent_moments(theta, self.moment_x, self.d)
        return _censored_rows(self._y0s(latent), self.sub_x, q, self.aux.prob_z0, self.aux.mean_x, ey, ey2)

    def gmm_value(self, theta, latent) -> float:
        mbar = self.moment_rows(theta, latent).mean(axis=0)
        return float(-0.5 * self.n0 * mbar @ self.w @ mbar)

    def log_density(self, theta, latent=None) -> float:
        lp = self.prior.log_density(self.names, theta)
        if not np.isfinite(lp):
            return -np.inf
        return self.lik.augmented_log_likelihood(theta, latent) + self.gmm_value(theta, latent) + lp

    def update_latent(self, theta, latent, step, rng):
        """Sequential independence Metropolis with truncated-Gumbel proposals.

        The proposal cancels the Gumbel density, leaving (1 - g) and the change
        in the GMM term; moment sums are updated one unit at a time.
        """
        if latent.size == 0:
            return latent, 1.0
        q = _unpack(np.asarray(theta, dtype=float), self.d)
        x = self.latent_x
        mu0 = q.xi0 + x @ q.xi_x
        proposal = truncated_gumbel_draw(mu0, q.s0, 0.0, rng)
        log_u = np.log(rng.random(latent.size))
        ey, ey2 = latent_moments(theta, self.moment_x, self.d)
        cur_rows = _censored_rows(latent, x, q, self.aux.prob_z0, self.aux.mean_x, ey, ey2)
        new_rows = _censored_rows(proposal, x, q, self.aux.prob_z0, self.aux.mean_x, ey, ey2)
        xb = x @ q.bx
        log_keep_cur = log_logistic(-(q.b0 + q.b1 * latent + q.b2 * latent * latent + xb))
        log_keep_new = log_logistic(-(q.b0 + q.b1 * proposal + q.b2 * proposal * proposal + xb))
        total = self.moment_rows(theta, latent).sum(axis=0)
        w = self.w
        scale = -0.5 * self.n0 / (self.n_sub * self.n_sub)
        q_cur = scale * float(total @ w @ total)
        out = latent.copy()
        accepted = 0
        for j in range(latent.size):
            cand = total + (new_rows[j] - cur_rows[j])
            q_new = scale * float(cand @ w @ cand)
            if log_u[j] < log_keep_new[j] - log_keep_cur[j] + q_new - q_cur:
                total, q_cur = cand, q_new
                out[j] = proposal[j]
                accepted += 1
        return out, accepted / latent.size
