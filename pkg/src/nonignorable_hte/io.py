"""CSV datasets and the JSON run configuration.

Dataset files have the header ``id,r,z,y1,y0,x1..xd`` with the literal
token ``NA`` for missing cells. Floats are written with ``repr`` so a
write/read round trip is exact.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ConfigurationError
from .model import ContractError, Dataset, GaussianModelParams, Setup, UnitRecord

NA = "NA"
SCHEMA_VERSION = 1


class DatasetParseError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


# --------------------------------------------------------------------------
# Datasets


def _cell(value) -> str:
    return NA if value is None else repr(float(value))


def write_units(units, path) -> None:
    units = list(units)
    d = len(units[0].x) if units else 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "r", "z", "y1", "y0", *[f"x{k + 1}" for k in range(d)]])
        for u in units:
            z = NA if u.z is None else str(int(u.z))
            w.writerow([u.id, str(int(u.r)), z, _cell(u.y1), _cell(u.y0), *[repr(float(v)) for v in u.x]])


def write_dataset(data: Dataset, path) -> None:
    write_units(data.units, path)


def _parse_binary(token, name, line, allow_na=False):
    if allow_na and token == NA:
        return None
    if token not in ("0", "1"):
        raise DatasetParseError(f"{name} must be 0 or 1, got {token!r}", line)
    return int(token)


def _parse_float(token, name, line, allow_na=True):
    if token == NA:
        if allow_na:
            return None
        raise DatasetParseError(f"{name} is missing", line)
    try:
        value = float(token)
    except ValueError:
        raise DatasetParseError(f"{name} is not a number: {token!r}", line) from None
    if not math.isfinite(value):
        raise DatasetParseError(f"{name} is not finite: {token!r}", line)
    return value


def read_units(path, censored: bool = False) -> list:
    """Parse a dataset CSV into validated UnitRecords; errors carry the file line number."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetParseError("empty file", 1)
    header = [h.strip() for h in rows[0]]
    d = len(header) - 5
    expected = ["id", "r", "z", "y1", "y0", *[f"x{k + 1}" for k in range(max(d, 0))]]
    if d < 1 or header != expected:
        raise DatasetParseError(f"header must be {','.join(expected if d >= 1 else expected + ['x1'])}, got {','.join(header)}", 1)
    units = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        row = [c.strip() for c in row]
        if len(row) != len(header):
            raise DatasetParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
        uid = row[0]
        if uid in seen:
            raise DatasetParseError(f"duplicate id {uid!r}", lineno)
        seen.add(uid)
        r = _parse_binary(row[1], "r", lineno)
        z = _parse_binary(row[2], "z", lineno, allow_na=True)
        y1 = _parse_float(row[3], "y1", lineno)
        y0 = _parse_float(row[4], "y0", lineno)
        x = tuple(_parse_float(c, f"x{k + 1}", lineno, allow_na=False) for k, c in enumerate(row[5:]))
        if censored:
            for name, v in (("y1", y1), ("y0", y0)):
                if v is not None and v < 0:
                    raise DatasetParseError(f"negative {name} ({v}) in censored mode", lineno)
        unit = UnitRecord(uid, x, r, z, y1, y0)
        try:
            unit.validate()
        except ContractError as exc:
            raise DatasetParseError(str(exc), lineno) from None
        units.append(unit)
    return units


def read_dataset(path, setup=Setup.RCT_ONE_SIDED, aux=None, censored: bool = False) -> Dataset:
    units = read_units(path, censored)
    if not units:
        raise DatasetParseError("no data rows")
    return Dataset.from_units(units, setup, aux)


# --------------------------------------------------------------------------
# Run configuration

_DGP_KEYS = {"model", "n", "params", "xSd", "armProb", "setup", "nBinary"}
_SAMPLER_KEYS = {"target", "iterations", "warmup", "chains", "quadOrder", "priorCoefScale", "priorSigmaScale", "rotate"}
_GMM_KEYS = {"weight", "n0", "useY0Sq", "auxFile", "aux"}
_ESTIMAND_KEYS = {"gridSize", "gridMin", "gridMax", "maxDraws"}
_REPLICATE_KEYS = {"replications", "baseSeed"}
_TOP_KEYS = {"schemaVersion", "dgp", "sampler", "gmm", "estimands", "replicate"}

TARGET_ALIASES = {
    "marginal": "MARGINAL_BAYES",
    "augmented": "AUGMENTED_BAYES",
    "quasi": "QUASI_BAYES",
}


def _check_keys(section: str, doc, allowed: set) -> dict:
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{section} must be a JSON object")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {section}: {sorted(unknown)}")
    return doc


def default_tobit_params():
    from .censored import TobitGumbelParams

    return TobitGumbelParams.synthetic_design()


@dataclass(frozen=True)
class DgpConfig:
    model: str = "gaussian"
    n: int = 1000
    params: object = None
    x_sd: float = 1.5
    arm_prob: float = 0.5
    setup: Setup = Setup.RCT_ONE_SIDED
    n_binary: int = 0


@dataclass(frozen=True)
class SamplerConfig:
    target: str = "MARGINAL_BAYES"
    iterations: int = 3000
    warmup: int = 1000
    chains: int = 1
    quad_order: int = 32
    prior_coef_scale: float = 10.0
    prior_sigma_scale: float = 5.0
    rotate: bool = True


@dataclass(frozen=True)
class GmmSection:
    weight: object = "identity"
    n0: str = "subsample"
    use_y0_sq: bool = False
    aux: Optional[object] = None


@dataclass(frozen=True)
class EstimandConfig:
    grid_size: int = 101
    grid_min: Optional[float] = None
    grid_max: Optional[float] = None
    max_draws: Optional[int] = 500


@dataclass(frozen=True)
class ReplicateConfig:
    replications: int = 50
    base_seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    dgp: DgpConfig = field(default_factory=DgpConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    gmm: GmmSection = field(default_factory=GmmSection)
    estimands: EstimandConfig = field(default_factory=EstimandConfig)
    replicate: ReplicateConfig = field(default_factory=ReplicateConfig)

    def dgp_params(self):
        if self.dgp.params is not None:
            return self.dgp.params
        if self.dgp.model == "censored":
            return default_tobit_params()
        return GaussianModelParams.simulation_design()


def _parse_params(model: str, doc):
    if doc is None:
        return None
    if model == "gaussian":
        names = set(GaussianModelParams.names())
        _check_keys("dgp.params", doc, names)
        missing = names - set(doc)
        if missing:
            raise ConfigurationError(f"dgp.params missing {sorted(missing)}")
        return GaussianModelParams(**{k: float(v) for k, v in doc.items()})
    from .censored import TobitGumbelParams

    names = {"xi0", "xi_x", "sigma0", "lambda0", "lambda1", "lambda_x", "sigma1", "beta0", "beta1", "beta2", "beta_x"}
    _check_keys("dgp.params", doc, names)
    missing = names - set(doc)
    if missing:
        raise ConfigurationError(f"dgp.params missing {sorted(missing)}")
    return TobitGumbelParams(**doc)


def parse_config(doc: dict, base_dir=None) -> RunConfig:
    """Validate a configuration document; unknown keys anywhere are errors."""
    from .gmm import AuxiliaryMoments

    _check_keys("config", doc, _TOP_KEYS)
    version = doc.get("schemaVersion", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schemaVersion {version!r} (expected {SCHEMA_VERSION})")
    g = _check_keys("dgp", doc.get("dgp"), _DGP_KEYS)
    model = g.get("model", "gaussian")
    if model not in ("gaussian", "censored"):
        raise ConfigurationError(f"unknown dgp.model {model!r}")
    try:
        setup = Setup(g.get("setup", Setup.RCT_ONE_SIDED.value))
    except ValueError:
        raise ConfigurationError(f"unknown dgp.setup {g.get('setup')!r}") from None
    dgp = DgpConfig(
        model=model,
        n=int(g.get("n", 1000)),
        params=_parse_params(model, g.get("params")),
        x_sd=float(g.get("xSd", 1.5)),
        arm_prob=float(g.get("armProb", 0.5)),
        setup=setup,
        n_binary=int(g.get("nBinary", 0)),
    )
    s = _check_keys("sampler", doc.get("sampler"), _SAMPLER_KEYS)
    target = s.get("target", "marginal")
    target = TARGET_ALIASES.get(target, target)
    if target not in TARGET_ALIASES.values():
        raise ConfigurationError(f"unknown sampler.target {s.get('target')!r}")
    sampler = SamplerConfig(
        target=target,
        iterations=int(s.get("iterations", 3000)),
        warmup=int(s.get("warmup", 1000)),
        chains=int(s.get("chains", 1)),
        quad_order=int(s.get("quadOrder", 32)),
        prior_coef_scale=float(s.get("priorCoefScale", 10.0)),
        prior_sigma_scale=float(s.get("priorSigmaScale", 5.0)),
        rotate=bool(s.get("rotate", True)),
    )
    m = _check_keys("gmm", doc.get("gmm"), _GMM_KEYS)
    aux = None
    if "aux" in m and "auxFile" in m:
        raise ConfigurationError("give gmm.aux or gmm.auxFile, not both")
    if "aux" in m:
        aux = AuxiliaryMoments.from_json_dict(m["aux"])
    elif "auxFile" in m:
        path = Path(m["auxFile"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        aux = AuxiliaryMoments.load(path)
    weight = m.get("weight", "identity")
    if isinstance(weight, list):
        weight = np.asarray(weight, dtype=float)
    gmm = GmmSection(weight=weight, n0=m.get("n0", "subsample"), use_y0_sq=bool(m.get("useY0Sq", False)), aux=aux)
    e = _check_keys("estimands", doc.get("estimands"), _ESTIMAND_KEYS)
    est = EstimandConfig(
        grid_size=int(e.get("gridSize", 101)),
        grid_min=None if e.get("gridMin") is None else float(e["gridMin"]),
        grid_max=None if e.get("gridMax") is None else float(e["gridMax"]),
        max_draws=None if e.get("maxDraws", 500) is None else int(e.get("maxDraws", 500)),
    )
    r = _check_keys("replicate", doc.get("replicate"), _REPLICATE_KEYS)
    rep = ReplicateConfig(replications=int(r.get("replications", 50)), base_seed=int(r.get("baseSeed", 0)))
    if rep.replications < 1:
        raise ConfigurationError("replicate.replications must be >= 1")
    return RunConfig(dgp, sampler, gmm, est, rep)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, base_dir=path.parent)


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
