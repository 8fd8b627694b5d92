"""Command-line entry point: simulate, estimate (alias fit), replicate, identify.

Every command writes only inside ``--out``. Failures print a JSON object
``{"error": ..., "message": ...}`` on stderr and exit nonzero (2 for usage
and configuration problems, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import ConfigurationError
from .io import (
    TARGET_ALIASES,
    DatasetParseError,
    RunConfig,
    dump_json,
    load_config,
    read_dataset,
    write_dataset,
)
from .model import ContractError, GaussianModelParams, Setup

USAGE_ERRORS = (ConfigurationError, ContractError, DatasetParseError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nonignorable-hte", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    _common(p)

    for name in ("estimate", "fit"):
        p = sub.add_parser(name, help="fit a model and write posterior summaries")
        _common(p)
        p.add_argument("--model", choices=["gaussian", "censored"], default=None)
        p.add_argument("--target", choices=sorted(TARGET_ALIASES), default=None)
        p.add_argument("--data", help="dataset CSV; simulated from the config when omitted")
        p.add_argument("--setup", choices=[s.value for s in Setup], default=None)
        p.add_argument("--aux", help="auxiliary moments JSON")

    p = sub.add_parser("replicate", help="run the simulation study")
    _common(p)

    p = sub.add_parser("identify", help="numerical completeness diagnostic")
    _common(p)
    p.add_argument("--params", help="params.json from an estimate run (posterior means are used)")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--grid-size", type=int, default=15)
    return parser


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _seed(args, cfg: RunConfig) -> int:
    return int(args.seed) if args.seed is not None else cfg.replicate.base_seed


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# Commands


def cmd_simulate(args) -> int:
    from .simulate import SimulationConfig, simulate

    cfg = _config(args)
    seed = _seed(args, cfg)
    data = simulate(SimulationConfig(cfg.dgp.n, cfg.dgp_params(), cfg.dgp.x_sd, seed, cfg.dgp.setup, cfg.dgp.arm_prob, cfg.dgp.n_binary))
    out = _out(args)
    write_dataset(data, out / "data.csv")
    if data.aux is not None:
        dump_json(data.aux.to_json_dict(), out / "aux.json")
    dgp = cfg.dgp_params()
    truth = {"model": cfg.dgp.model, "seed": seed, "setup": data.setup.value,
             "params": dict(zip(dgp.names(), (float(v) for v in dgp.to_array())))}
    if isinstance(dgp, GaussianModelParams):
        from .model import closed_form_ate

        truth["ate"] = closed_form_ate(dgp, cfg.dgp.x_sd)
    dump_json(truth, out / "truth.json")
    return 0


def _load_data(args, cfg: RunConfig, model: str, seed: int):
    from .gmm import AuxiliaryMoments

    setup = Setup(args.setup) if args.setup else cfg.dgp.setup
    aux = AuxiliaryMoments.load(args.aux) if args.aux else cfg.gmm.aux
    if args.data:
        if setup is Setup.OBS_MACRO and aux is None:
            raise ContractError("setup OBS_MACRO needs auxiliary moments: missing key 'meanY0' (pass --aux or gmm.auxFile)")
        return read_dataset(args.data, setup, aux if setup is Setup.OBS_MACRO else None, censored=(model == "censored"))
    from .simulate import SimulationConfig, simulate

    return simulate(SimulationConfig(cfg.dgp.n, cfg.dgp_params(), cfg.dgp.x_sd, seed, setup, cfg.dgp.arm_prob, cfg.dgp.n_binary))


def _grid(cfg: RunConfig, data, draws, censored: bool):
    e = cfg.estimands
    if e.grid_min is None and e.grid_max is None:
        return None
    pool = data.y[data.y0_observed & (data.y > 0)] if censored else data.y[data.y0_observed]
    lo = e.grid_min if e.grid_min is not None else float(np.percentile(pool, 1))
    hi = e.grid_max if e.grid_max is not None else float(np.percentile(pool, 99))
    return np.linspace(lo, hi, e.grid_size)


def cmd_estimate(args) -> int:
    from dataclasses import replace

    from .estimands import default_grid, hte_curve, posterior_estimands
    from .harness import _posterior_spec, resolve_aux
    from .sampler import TargetKind, convergence_diagnostics, fit

    cfg = _config(args)
    model = args.model or cfg.dgp.model
    if args.target:
        cfg = replace(cfg, sampler=replace(cfg.sampler, target=TARGET_ALIASES[args.target]))
    if model != cfg.dgp.model:
        cfg = replace(cfg, dgp=replace(cfg.dgp, model=model, params=None))
    seed = _seed(args, cfg)
    data = _load_data(args, cfg, model, seed)
    if model == "gaussian" and data.d != 1:
        raise ContractError(f"the gaussian model takes one covariate; the data has d={data.d}")
    needs_aux = model == "censored" or cfg.sampler.target == TargetKind.QUASI_BAYES.value
    aux = resolve_aux(cfg, data) if needs_aux else None
    spec = _posterior_spec(cfg, data, aux)
    chains = fit(spec, cfg.sampler.iterations, cfg.sampler.warmup, seed, cfg.sampler.chains, rotate=cfg.sampler.rotate)
    out = _out(args)
    names = chains[0].names
    stacked = np.vstack([c.parameter_draws for c in chains])
    params = {}
    for j, name in enumerate(names):
        col = stacked[:, j]
        lo, hi = np.percentile(col, [2.5, 97.5])
        params[name] = {"mean": float(col.mean()), "sd": float(col.std(ddof=1)), "ci95": [float(lo), float(hi)]}
    dump_json({"schemaVersion": 1, "model": model, "target": spec.target.value, "parameters": params}, out / "params.json")

    estimands = {"schemaVersion": 1}
    if model == "gaussian":
        post = posterior_estimands(chains[0], data, aux, cfg.sampler.quad_order, cfg.estimands.max_draws)
        for key in ("ate", "att", "atu"):
            estimands[key] = post[key].to_dict()
        grid = _grid(cfg, data, chains[0], False)
        if grid is None:
            grid = default_grid(data, chains[0], cfg.estimands.grid_size)
        curve = hte_curve(chains[0], data, grid, cfg.estimands.max_draws)
    else:
        from .censored import censored_hte_curve

        res = censored_hte_curve(chains[0], data, _grid(cfg, data, chains[0], True), cfg.estimands.max_draws)
        curve = res.curve
        estimands["hteAtZero"] = res.atom.to_dict()
    estimands["hteCurveFlaggedPoints"] = int(np.count_nonzero(curve.flagged))
    dump_json(estimands, out / "estimands.json")
    curve.to_csv(out / "hte_curve.csv")

    diag = {
        "schemaVersion": 1,
        "seed": seed,
        "chains": len(chains),
        "iterations": cfg.sampler.iterations,
        "warmup": cfg.sampler.warmup,
        "acceptanceRates": [c.acceptance_rates for c in chains],
        "latentAcceptance": [c.latent_acceptance for c in chains],
    }
    try:
        report = convergence_diagnostics(chains)
        diag["rhat"] = {k: (v if np.isfinite(v) else None) for k, v in report.rhat.items()}
        diag["ess"] = {k: (v if np.isfinite(v) else None) for k, v in report.ess.items()}
    except ValueError as exc:
        diag["rhat"] = diag["ess"] = None
        diag["diagnosticsNote"] = str(exc)
    dump_json(diag, out / "diagnostics.json")
    return 0


def cmd_replicate(args) -> int:
    from .harness import replicate

    cfg = _config(args)
    summary = replicate(cfg, threads=max(1, args.threads), out_dir=_out(args), seed=args.seed)
    print(json.dumps({"replications": summary.replications, "failed": len(summary.failed)}))
    return 0


def cmd_identify(args) -> int:
    from .identify import completeness_diagnostic, default_grids

    cfg = _config(args)
    psi = cfg.dgp_params()
    if args.params:
        with open(args.params) as fh:
            doc = json.load(fh)
        means = {k: v["mean"] for k, v in doc["parameters"].items()}
        psi = GaussianModelParams(**{n: means[n] for n in GaussianModelParams.names()})
    if not isinstance(psi, GaussianModelParams):
        raise ConfigurationError("the identification diagnostic is defined for the gaussian model")
    x_grid, y0_grid = default_grids(psi, cfg.dgp.x_sd, size=args.grid_size)
    report = completeness_diagnostic(psi, x_grid, y0_grid, args.tol)
    dump_json(report.to_dict(), _out(args) / "identify.json")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "fit": cmd_estimate,
    "replicate": cmd_replicate,
    "identify": cmd_identify,
}


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", str(exc), 2)
    try:
        return COMMANDS[args.command](args)
    except USAGE_ERRORS as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
