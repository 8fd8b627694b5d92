"""Replication harness: simulate, fit and summarize many independent studies.

Each replication is reduced to a plain JSON-compatible record, and the
summary is a pure function of those records, so a summary rebuilt from
persisted per-replication files matches the in-memory one exactly.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import EstimationError, ipwe_ate, mean_difference, propensity_c_statistic, wald_late
from .estimands import posterior_estimands
from .gmm import GmmConfig, SingularWeightError, aux_from_control_arm
from .io import RunConfig, dump_json
from .likelihood import PriorSpec
from .model import GaussianModelParams, closed_form_ate
from .sampler import InitializationError, PosteriorSpec, TargetKind, fit
from .simulate import SimulationConfig, simulate

ESTIMATORS = ("Prop", "MeanDiff", "IPWE", "LATE")
FAILURES = (InitializationError, SingularWeightError, EstimationError, FloatingPointError)


@dataclass(frozen=True)
class ParameterRow:
    name: str
    true_value: float
    mean: float
    sd: float
    coverage: float
    mse: float


@dataclass(frozen=True)
class EstimatorRow:
    name: str
    mean: float
    sd: float
    coverage: float
    mse: float


@dataclass(frozen=True)
class ReplicationSummary:
    parameters: tuple
    estimators: tuple
    replications: int
    failed: tuple
    true_ate: Optional[float] = None
    c_statistic: Optional[float] = None

    def __post_init__(self):
        for row in (*self.parameters, *self.estimators):
            if not 0.0 <= row.coverage <= 100.0 or row.mse < 0:
                raise ValueError(f"invalid summary row {row}")

    def parameter(self, name: str) -> ParameterRow:
        return next(r for r in self.parameters if r.name == name)

    def estimator(self, name: str) -> EstimatorRow:
        return next(r for r in self.estimators if r.name == name)

    def to_dict(self) -> dict:
        return _finite({
            "schemaVersion": 1,
            "replications": self.replications,
            "failed": [list(f) for f in self.failed],
            "trueAte": self.true_ate,
            "cStatistic": self.c_statistic,
            "parameters": [
                {"name": r.name, "trueValue": r.true_value, "meanOfPosteriorMeans": r.mean,
                 "sdOfPosteriorMeans": r.sd, "coveragePercent": r.coverage, "mse": r.mse}
                for r in self.parameters
            ],
            "estimators": [
                {"name": r.name, "mean": r.mean, "sd": r.sd, "coveragePercent": r.coverage, "mse": r.mse}
                for r in self.estimators
            ],
        })


def _finite(obj):
    """Replace NaN by None so the summary stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


# --------------------------------------------------------------------------
# One replication


def _posterior_spec(cfg: RunConfig, data, aux):
    s = cfg.sampler
    target = TargetKind(s.target)
    gmm = None
    if target is TargetKind.QUASI_BAYES or cfg.dgp.model == "censored":
        target = TargetKind.QUASI_BAYES
        gmm = GmmConfig(weight=cfg.gmm.weight, n0=cfg.gmm.n0, use_y0_sq=cfg.gmm.use_y0_sq)
    prior = PriorSpec(coef_scale=s.prior_coef_scale, sigma_scale=s.prior_sigma_scale)
    return PosteriorSpec(target, data, cfg.dgp.model, prior, gmm, aux if gmm is not None else None, s.quad_order)


def resolve_aux(cfg: RunConfig, data):
    """Auxiliary moments: the configured ones, the dataset's, or estimates from the control arm."""
    if cfg.gmm.aux is not None:
        return cfg.gmm.aux
    if data.aux is not None:
        return data.aux
    return aux_from_control_arm(data)


def run_replication(cfg: RunConfig, seed: int) -> dict:
    """Simulate, fit and evaluate one study; failures become a record with ``failed`` set."""
    dgp = cfg.dgp_params()
    record = {"seed": int(seed), "failed": None}
    try:
        data = simulate(SimulationConfig(cfg.dgp.n, dgp, cfg.dgp.x_sd, seed, cfg.dgp.setup, cfg.dgp.arm_prob, cfg.dgp.n_binary))
        aux = resolve_aux(cfg, data)
        spec = _posterior_spec(cfg, data, aux)
        chains = fit(spec, cfg.sampler.iterations, cfg.sampler.warmup, seed, cfg.sampler.chains,
                     rotate=cfg.sampler.rotate, keep_latent=True)
    except FAILURES as exc:
        record["failed"] = f"{type(exc).__name__}: {exc}"
        return record
    stacked = np.vstack([c.parameter_draws for c in chains])
    names = chains[0].names
    params = {}
    for j, name in enumerate(names):
        col = stacked[:, j]
        lo, hi = np.percentile(col, [2.5, 97.5])
        params[name] = {"mean": float(col.mean()), "sd": float(col.std(ddof=1)), "ci95": [float(lo), float(hi)]}
    record["parameters"] = params
    record["acceptance"] = chains[0].acceptance_rates
    if cfg.dgp.model == "gaussian":
        est = {}
        try:
            post = posterior_estimands(chains[0], data, aux if spec.target is TargetKind.QUASI_BAYES else None,
                                       cfg.sampler.quad_order, cfg.estimands.max_draws)
            est["Prop"] = {"estimate": post["ate"].mean, "ci95": list(post["ate"].ci95)}
        except FAILURES as exc:
            est["Prop"] = {"error": str(exc)}
        for name, fn in (("MeanDiff", mean_difference), ("IPWE", ipwe_ate), ("LATE", wald_late)):
            try:
                res = fn(data)
                est[name] = {"estimate": float(res.estimate), "ci95": [float(res.ci95[0]), float(res.ci95[1])]}
            except FAILURES as exc:
                est[name] = {"error": str(exc)}
        record["estimators"] = est
        try:
            record["cStatistic"] = propensity_c_statistic(data)
        except FAILURES:
            record["cStatistic"] = None
    return record


# --------------------------------------------------------------------------
# Summary


def _mean_sd(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def _truth_vector(cfg: RunConfig) -> dict:
    dgp = cfg.dgp_params()
    return dict(zip(dgp.names(), (float(v) for v in dgp.to_array())))


def summarize(records, cfg: RunConfig, true_ate: Optional[float] = None) -> ReplicationSummary:
    """Mean, sd, coverage (percent) and MSE over the successful replications."""
    ok = [r for r in records if not r.get("failed")]
    failed = tuple((r["seed"], r["failed"]) for r in records if r.get("failed"))
    truth = _truth_vector(cfg)
    rows = []
    for name, tv in truth.items():
        means = [r["parameters"][name]["mean"] for r in ok]
        covered = [r["parameters"][name]["ci95"][0] <= tv <= r["parameters"][name]["ci95"][1] for r in ok]
        mean, sd = _mean_sd(means)
        cov = 100.0 * float(np.mean(covered)) if ok else 0.0
        mse = float(np.mean((np.asarray(means) - tv) ** 2)) if ok else float("nan")
        rows.append(ParameterRow(name, tv, mean, sd, cov, mse))
    est_rows = []
    c_stat = None
    if cfg.dgp.model == "gaussian" and true_ate is not None:
        for name in ESTIMATORS:
            vals = [r["estimators"][name] for r in ok if "estimate" in r["estimators"].get(name, {})]
            est = [v["estimate"] for v in vals]
            covered = [v["ci95"][0] <= true_ate <= v["ci95"][1] for v in vals]
            mean, sd = _mean_sd(est)
            cov = 100.0 * float(np.mean(covered)) if vals else 0.0
            mse = float(np.mean((np.asarray(est) - true_ate) ** 2)) if vals else float("nan")
            est_rows.append(EstimatorRow(name, mean, sd, cov, mse))
        cs = [r["cStatistic"] for r in ok if r.get("cStatistic") is not None]
        c_stat = float(np.mean(cs)) if cs else None
    return ReplicationSummary(tuple(rows), tuple(est_rows), len(ok), failed, true_ate, c_stat)


def true_ate_for(cfg: RunConfig) -> Optional[float]:
    dgp = cfg.dgp_params()
    if isinstance(dgp, GaussianModelParams):
        return closed_form_ate(dgp, x_sd=cfg.dgp.x_sd)
    return None


def _job(args):
    cfg, seed = args
    return run_replication(cfg, seed)


def replicate(cfg: RunConfig, threads: int = 1, out_dir=None, seed: Optional[int] = None) -> ReplicationSummary:
    """Run replications with seeds base+1 .. base+R; optionally persist one JSON file per replication."""
    base = cfg.replicate.base_seed if seed is None else int(seed)
    seeds = [base + k for k in range(1, cfg.replicate.replications + 1)]
    jobs = [(cfg, s) for s in seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_job, jobs))
    else:
        records = [_job(j) for j in jobs]
    summary = summarize(records, cfg, true_ate_for(cfg))
    if out_dir is not None:
        rep_dir = Path(out_dir) / "replications"
        rep_dir.mkdir(parents=True, exist_ok=True)
        for rec in records:
            dump_json(rec, rep_dir / f"rep_{rec['seed']:06d}.json")
        dump_json(summary.to_dict(), Path(out_dir) / "summary.json")
    return summary


def load_records(out_dir) -> list:
    rep_dir = Path(out_dir) / "replications"
    records = []
    for path in sorted(rep_dir.glob("rep_*.json")):
        with open(path) as fh:
            records.append(json.load(fh))
    return records


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)
