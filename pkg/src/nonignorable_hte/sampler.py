"""Adaptive Metropolis-within-Gibbs for the (quasi-)posterior.

One Gaussian random-walk block per scalar parameter, plus (for augmented
targets) one sweep over the latent outcomes. Scale parameters move on the
log scale with the Jacobian in the target. Step sizes follow a
Robbins-Monro recursion toward 0.44 acceptance during warmup and are frozen
afterwards, so retained draws come from a fixed, valid kernel.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special, stats

from .baselines import fit_logistic
from .core import ConfigurationError, gauss_hermite_rule
from .gmm import AuxiliaryMoments, GaussianGmmTerm, GmmConfig, SingularWeightError, two_step_weight
from .likelihood import GaussianLikelihood, PriorSpec
from .model import ContractError, Dataset, GaussianModelParams

TARGET_ACCEPT = 0.44
ROTATED_STEP = 2.4
INIT_RETRIES = 100


class InitializationError(RuntimeError):
    pass


class DiagnosticError(ValueError):
    pass


class TargetKind(str, enum.Enum):
    MARGINAL_BAYES = "MARGINAL_BAYES"
    AUGMENTED_BAYES = "AUGMENTED_BAYES"
    QUASI_BAYES = "QUASI_BAYES"


@dataclass(frozen=True)
class PosteriorSpec:
    target: TargetKind
    data: Dataset
    model: str = "gaussian"
    prior: PriorSpec = field(default_factory=PriorSpec)
    gmm: Optional[GmmConfig] = None
    aux: Optional[AuxiliaryMoments] = None
    quad_order: int = 32
    init: Optional[object] = None

    def __post_init__(self):
        object.__setattr__(self, "target", TargetKind(self.target))
        if self.target is TargetKind.QUASI_BAYES and (self.gmm is None or self.aux is None):
            raise ContractError("QUASI_BAYES needs a GmmConfig and AuxiliaryMoments")
        if self.model not in ("gaussian", "censored"):
            raise ConfigurationError(f"unknown model {self.model!r}")


@dataclass
class PosteriorDraws:
    names: tuple
    parameter_draws: np.ndarray
    warmup: int
    iterations: int
    chain_id: int
    acceptance_rates: dict
    seed: int
    latent_draws: Optional[np.ndarray] = None
    latent_acceptance: Optional[float] = None
    step_sizes: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.parameter_draws.shape[0] != self.iterations - self.warmup:
            raise ValueError("retained draws must equal iterations - warmup")
        self.parameter_draws.setflags(write=False)
        if self.latent_draws is not None:
            self.latent_draws.setflags(write=False)

    def __len__(self):
        return self.parameter_draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.parameter_draws[:, self.names.index(name)]

    def means(self) -> dict:
        return dict(zip(self.names, self.parameter_draws.mean(axis=0)))

    def summary(self) -> dict:
        out = {}
        for j, name in enumerate(self.names):
            col = self.parameter_draws[:, j]
            lo, hi = np.percentile(col, [2.5, 97.5])
            out[name] = {"mean": float(col.mean()), "sd": float(col.std(ddof=1)), "ci95": [float(lo), float(hi)]}
        return out


# --------------------------------------------------------------------------
# Targets
#
# A target exposes ``names``, ``log_scale`` (bool mask), ``initial()`` ->
# (theta, latent), ``log_density(theta, latent)`` on the natural scale and,
# when it carries latents, ``update_latent(theta, latent, step, rng)`` ->
# (latent, accepted fraction).


class FunctionTarget:
    """Wraps a plain log-density over a parameter vector; used for sampler checks."""

    def __init__(self, log_density: Callable, init, names=None, log_scale=None):
        init = np.atleast_1d(np.asarray(init, dtype=float))
        self._f = log_density
        self._init = init
        self.names = tuple(names) if names else tuple(f"p{i}" for i in range(init.size))
        self.log_scale = np.zeros(init.size, dtype=bool) if log_scale is None else np.asarray(log_scale, dtype=bool)

    def initial(self):
        return self._init.copy(), None

    def log_density(self, theta, latent=None) -> float:
        return float(self._f(theta))


def _gaussian_initial(data: Dataset) -> GaussianModelParams:
    x = data.x[:, 0]
    obs = data.y0_observed
    A = np.column_stack([np.ones(obs.sum()), x[obs]])
    coef0, *_ = np.linalg.lstsq(A, data.y[obs], rcond=None)
    s0 = float(np.std(data.y[obs] - A @ coef0)) or 1.0
    t = data.treated
    mu0 = coef0[0] + coef0[1] * x[t]
    B = np.column_stack([np.ones(t.sum()), x[t], mu0, mu0 * mu0])
    coef1, *_ = np.linalg.lstsq(B, data.y[t], rcond=None)
    s1 = float(np.std(data.y[t] - B @ coef1)) or 1.0
    offered = data.r
    gamma = fit_logistic(np.column_stack([np.ones(offered.sum()), x[offered]]), data.z[offered].astype(float))
    return GaussianModelParams(
        theta00=coef0[0], theta01=coef0[1], theta10=coef1[0], theta11=coef1[1], theta12=coef1[2],
        theta13=coef1[3], sigma0=s0, sigma1=s1, beta0=gamma[0], beta1=gamma[1], beta2=0.1,
    )


class GaussianTarget:
    names = GaussianModelParams.names()

    def __init__(self, spec: PosteriorSpec, gmm_weight: Optional[np.ndarray] = None):
        self.spec = spec
        self.kind = spec.target
        self.prior = spec.prior
        self.lik = GaussianLikelihood(spec.data, gauss_hermite_rule(spec.quad_order))
        self.log_scale = np.array([n.startswith("sigma") for n in self.names])
        self.gmm_term = None
        if self.kind is TargetKind.QUASI_BAYES:
            self.gmm_term = GaussianGmmTerm(spec.data, spec.gmm, spec.aux, gmm_weight)
        self._x_t = self.lik.x_t
        self._y1_t = self.lik.y1_t
        self.fixed_values = spec.prior.fixed_values(self.names)
        if self.fixed_values.get("beta2") == 0.0:
            raise ContractError("beta2 fixed at 0 leaves the outcome model unidentified; beta2 must be free or nonzero")
        self.fixed = np.array([n in self.fixed_values for n in self.names])

    @property
    def has_latent(self) -> bool:
        return self.kind is TargetKind.AUGMENTED_BAYES

    def initial(self):
        psi = self.spec.init if self.spec.init is not None else _gaussian_initial(self.spec.data)
        theta = psi.to_array()
        for name, value in self.fixed_values.items():
            theta[self.names.index(name)] = value
        latent = None
        if self.has_latent:
            latent = theta[0] + theta[1] * self._x_t
        return theta, latent

    def log_density(self, theta, latent=None) -> float:
        lp = self.prior.log_density(self.names, theta)
        if not np.isfinite(lp):
            return -np.inf
        if self.has_latent:
            ll = self.lik.augmented_log_likelihood(theta, latent)
        else:
            ll = self.lik.log_likelihood(theta)
        if self.gmm_term is not None:
            try:
                ll += self.gmm_term(theta)
            except SingularWeightError:
                return -np.inf
        return ll + lp

    def latent_terms(self, theta, latent) -> np.ndarray:
        return self.lik.augmented_treated_terms(theta, latent)

    def update_latent(self, theta, latent, step, rng):
        """Independent per-unit random-walk moves; valid because the latents are conditionally independent."""
        proposal = latent + step * theta[6] * rng.standard_normal(latent.size)
        log_ratio = self.latent_terms(theta, proposal) - self.latent_terms(theta, latent)
        accept = np.log(rng.random(latent.size)) < log_ratio
        return np.where(accept, proposal, latent), float(accept.mean()) if latent.size else 1.0


def build_target(spec: PosteriorSpec, gmm_weight=None):
    if spec.model == "censored":
        from .censored import CensoredTarget

        return CensoredTarget(spec, gmm_weight)
    return GaussianTarget(spec, gmm_weight)


# --------------------------------------------------------------------------
# Chain


def quasi_accept_probability(q0_candidate: float, q0_old: float) -> float:
    """min{1, exp(Q0(candidate) - Q0(old))}: the GMM factor of the acceptance ratio."""
    return float(min(1.0, math.exp(min(0.0, q0_candidate - q0_old))))


def chain_rng(seed: int, chain_id: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chain_id)])))


def _to_natural(u, log_scale):
    theta = u.copy()
    theta[log_scale] = np.exp(u[log_scale])
    return theta


def _to_unconstrained(theta, log_scale):
    u = np.asarray(theta, dtype=float).copy()
    u[log_scale] = np.log(u[log_scale])
    return u


def _rotation_checkpoints(warmup: int) -> list:
    """Warmup iterations after which the block directions are re-estimated."""
    if warmup < 200:
        return []
    return sorted({int(warmup * f) for f in (0.1, 0.2, 0.35, 0.5, 0.65, 0.8)})


def _principal_axes(history: np.ndarray):
    """Columns are eigenvectors of the draw covariance scaled by their standard deviations."""
    if history.shape[0] < 2 * history.shape[1]:
        return None
    cov = np.cov(history, rowvar=False)
    vals, vecs = np.linalg.eigh(cov)
    if not np.all(np.isfinite(vals)) or vals.max() <= 0:
        return None
    vals = np.maximum(vals, 1e-12 * vals.max())
    return vecs * np.sqrt(vals)[None, :]


def run_chain(
    spec,
    iterations: int,
    warmup: int,
    seed: int,
    chain_id: int = 0,
    adapt: bool = True,
    initial_step: float = 0.1,
    gmm_weight=None,
    keep_latent: bool = True,
    rotate: bool = True,
) -> PosteriorDraws:
    """Run one chain; ``spec`` is a PosteriorSpec or a target object (test hook).

    With ``rotate`` the scalar blocks move along the principal axes of the
    warmup draws (re-estimated at a few warmup checkpoints) instead of the
    coordinate axes. Axes and step sizes are frozen once warmup ends.
    """
    if iterations < 1 or not 0 <= warmup < iterations:
        raise ConfigurationError("need iterations >= 1 and 0 <= warmup < iterations")
    target = build_target(spec, gmm_weight) if isinstance(spec, PosteriorSpec) else spec
    rng = chain_rng(seed, chain_id)
    log_scale = target.log_scale
    fixed = getattr(target, "fixed", None)
    fixed = fixed if fixed is not None and fixed.any() else None
    has_latent = getattr(target, "has_latent", False)

    theta0, latent = target.initial()
    u = _to_unconstrained(theta0, log_scale)

    def log_post(u_, lat):
        val = target.log_density(_to_natural(u_, log_scale), lat)
        return val + float(np.sum(u_[log_scale])) if np.isfinite(val) else -np.inf

    lp = log_post(u, latent)
    retries = 0
    base = u.copy()
    while not np.isfinite(lp):
        if retries >= INIT_RETRIES:
            raise InitializationError(f"target is -inf at the initial value after {INIT_RETRIES} jittered retries")
        retries += 1
        u = base + 0.1 * rng.standard_normal(base.size)
        if fixed is not None:
            u[fixed] = base[fixed]
        lp = log_post(u, latent)

    dim = u.size
    log_step = np.full(dim, math.log(initial_step))
    axes = np.eye(dim)
    checkpoints = set(_rotation_checkpoints(warmup)) if (adapt and rotate and dim > 1) else set()
    history = np.empty((warmup, dim)) if checkpoints else None
    since = 0
    lat_log_step = math.log(1.0)
    kept = iterations - warmup
    draws = np.empty((kept, dim))
    latent_draws = np.empty((kept, latent.size)) if (has_latent and keep_latent) else None
    accepted = np.zeros(dim)
    lat_acc_total = 0.0

    for it in range(iterations):
        in_warmup = it < warmup
        since += 1
        gain = since**-0.6
        for j in range(dim):
            prop = u + math.exp(log_step[j]) * rng.standard_normal() * axes[:, j]
            if fixed is not None:
                prop[fixed] = u[fixed]
            lp_prop = log_post(prop, latent)
            log_alpha = lp_prop - lp
            ok = math.log(rng.random()) < log_alpha
            if ok:
                u, lp = prop, lp_prop
            if in_warmup:
                if adapt:
                    alpha = math.exp(min(0.0, log_alpha)) if np.isfinite(log_alpha) else 0.0
                    log_step[j] += gain * (alpha - TARGET_ACCEPT)
            elif ok:
                accepted[j] += 1
        if has_latent:
            theta = _to_natural(u, log_scale)
            latent, acc = target.update_latent(theta, latent, math.exp(lat_log_step), rng)
            lp = log_post(u, latent)
            if in_warmup:
                if adapt:
                    lat_log_step += gain * (acc - TARGET_ACCEPT)
            else:
                lat_acc_total += acc
        if history is not None and in_warmup:
            history[it] = u
            if it + 1 in checkpoints:
                rotated = _principal_axes(history[(it + 1) // 2: it + 1])
                if rotated is not None:
                    axes = rotated
                    log_step[:] = math.log(ROTATED_STEP)
                    since = 0
        if not in_warmup:
            k = it - warmup
            draws[k] = _to_natural(u, log_scale)
            if latent_draws is not None:
                latent_draws[k] = latent

    rates = {name: float(accepted[j] / kept) for j, name in enumerate(target.names)}
    return PosteriorDraws(
        names=tuple(target.names),
        parameter_draws=draws,
        warmup=warmup,
        iterations=iterations,
        chain_id=chain_id,
        acceptance_rates=rates,
        seed=seed,
        latent_draws=latent_draws,
        latent_acceptance=(lat_acc_total / kept) if has_latent else None,
        step_sizes=np.exp(log_step),
    )


def fit(spec: PosteriorSpec, iterations: int, warmup: int, seed: int, chains: int = 1, **kwargs) -> list:
    """Run ``chains`` chains; resolves a two-step GMM weight with a pilot chain first."""
    weight = None
    if spec.target is TargetKind.QUASI_BAYES and isinstance(spec.gmm.weight, str) and spec.gmm.weight == "two_step":
        pilot_spec = PosteriorSpec(
            spec.target, spec.data, spec.model, spec.prior, spec.gmm.with_weight("identity"), spec.aux,
            spec.quad_order, spec.init,
        )
        pilot = run_chain(pilot_spec, max(iterations // 2, 2), max(warmup // 2, 1), seed, chain_id=10_000, **kwargs)
        target = build_target(pilot_spec)
        theta = pilot.parameter_draws.mean(axis=0)
        latent = None
        if pilot.latent_draws is not None:
            latent = pilot.latent_draws[-1]
        weight = two_step_weight(target.moment_rows(theta, latent) if latent is not None else target.gmm_term.rows(theta))
    return [run_chain(spec, iterations, warmup, seed, chain_id=c, gmm_weight=weight, **kwargs) for c in range(chains)]


# --------------------------------------------------------------------------
# Convergence diagnostics


def _split(chains: np.ndarray) -> np.ndarray:
    n = chains.shape[1]
    half = n // 2
    return np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    s = x.size
    return special.ndtri((ranks - 0.375) / (s + 0.25))


def _rhat(x: np.ndarray) -> float:
    m, n = x.shape
    chain_means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * chain_means.var(ddof=1)
    if w == 0.0:
        return 1.0 if b == 0.0 else np.inf
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / n


def _ess(x: np.ndarray) -> float:
    m, n = x.shape
    if n < 4:
        return float("nan")
    acov = np.array([_autocov(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float("nan")
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer's initial monotone positive sequence over pairs of lags
    total = 0.0
    prev = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        t += 2
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / math.log10(m * n))
    return float(m * n / tau)


@dataclass(frozen=True)
class ConvergenceReport:
    rhat: dict
    ess: dict


def convergence_diagnostics(chains: Sequence[PosteriorDraws], min_draws: int = 100) -> ConvergenceReport:
    """Rank-normalized split-R-hat (max of bulk and folded) and bulk ESS per parameter."""
    chains = list(chains)
    if not chains:
        raise DiagnosticError("need at least one chain")
    n = min(len(c) for c in chains)
    if n < min_draws:
        raise DiagnosticError(f"need at least {min_draws} retained draws per chain, got {n}")
    names = chains[0].names
    stacked = np.stack([c.parameter_draws[:n] for c in chains])
    rhat, ess = {}, {}
    for j, name in enumerate(names):
        x = _split(stacked[:, :, j])
        z = _rank_normalize(x)
        folded = _rank_normalize(np.abs(x - np.median(x)))
        rhat[name] = max(_rhat(z), _rhat(folded))
        ess[name] = _ess(z)
    return ConvergenceReport(rhat=rhat, ess=ess)
