"""Moment conditions on the untreated outcome and the GMM quasi-log-likelihood term.

The moment function is built so that E[m0(y0, x, psi) | z=0] = 0 at the true
propensity: by Bayes' rule, reweighting z=0 units by 1 / p(z=0 | y0, x)
recovers the population law of (y0, x).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import special

from .core import ConfigurationError
from .model import ContractError, Dataset, GaussianModelParams

PROPENSITY_CLAMP = 1e-12
TWO_STEP_RIDGE = 1e-8


class SingularWeightError(ArithmeticError):
    pass


class AuxiliaryRequiredError(ContractError):
    """No control arm to estimate moments from; MACRO_GIVEN moments are needed."""


class AuxSource(str, enum.Enum):
    MACRO_GIVEN = "MACRO_GIVEN"
    ESTIMATED_FROM_CONTROL_ARM = "ESTIMATED_FROM_CONTROL_ARM"


@dataclass(frozen=True)
class AuxiliaryMoments:
    mean_y0: float
    mean_x: np.ndarray
    prob_z0: float
    moment_y0_sq: Optional[float] = None
    source: AuxSource = AuxSource.MACRO_GIVEN

    def __post_init__(self):
        object.__setattr__(self, "mean_x", np.atleast_1d(np.asarray(self.mean_x, dtype=float)))
        object.__setattr__(self, "source", AuxSource(self.source))
        if not 0.0 < self.prob_z0 < 1.0:
            raise ContractError(f"probZ0 must lie in (0, 1), got {self.prob_z0}")
        if self.mean_y0 is None or not np.isfinite(self.mean_y0):
            raise ContractError("meanY0 is required: the moment set must include E[y0]")

    def require(self, d: int, need_y0_sq: bool = False) -> None:
        if self.mean_x.size != d:
            raise ContractError(f"meanX has {self.mean_x.size} entries, the data has d={d}")
        if need_y0_sq and self.moment_y0_sq is None:
            raise ContractError("momentY0Sq is required for the quadratic y0 moment")

    def to_json_dict(self) -> dict:
        out = {"meanY0": self.mean_y0, "meanX": self.mean_x.tolist(), "probZ0": self.prob_z0}
        if self.moment_y0_sq is not None:
            out["momentY0Sq"] = self.moment_y0_sq
        out["source"] = self.source.value
        return out

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AuxiliaryMoments":
        allowed = {"meanY0", "meanX", "probZ0", "momentY0Sq", "source"}
        unknown = set(doc) - allowed
        if unknown:
            raise ContractError(f"unknown auxiliary moment keys: {sorted(unknown)}")
        for key in ("meanY0", "meanX", "probZ0"):
            if key not in doc:
                raise ContractError(f"auxiliary moments missing required key {key!r}")
        return cls(
            mean_y0=float(doc["meanY0"]),
            mean_x=np.atleast_1d(np.asarray(doc["meanX"], dtype=float)),
            prob_z0=float(doc["probZ0"]),
            moment_y0_sq=None if doc.get("momentY0Sq") is None else float(doc["momentY0Sq"]),
            source=AuxSource(doc.get("source", AuxSource.MACRO_GIVEN.value)),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AuxiliaryMoments":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class GmmConfig:
    """``weight`` is ``"identity"``, ``"two_step"`` or an explicit symmetric PSD matrix.

    ``n0`` selects the scaling count: ``"subsample"`` (size of the r=1, z=0
    set the moments are averaged over) or ``"control_arm"`` (number of r=0
    units).
    """

    weight: object = "identity"
    n0: str = "subsample"
    use_y0_sq: bool = False

    def __post_init__(self):
        if isinstance(self.weight, str):
            if self.weight not in ("identity", "two_step"):
                raise ConfigurationError(f"unknown weight token {self.weight!r}")
        else:
            w = np.asarray(self.weight, dtype=float)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ConfigurationError("weight matrix must be square")
            if not np.allclose(w, w.T, atol=1e-12):
                raise ConfigurationError("weight matrix must be symmetric")
            if np.linalg.eigvalsh(w).min() < -1e-10:
                raise ConfigurationError("weight matrix must be positive semidefinite")
            object.__setattr__(self, "weight", w)
        if self.n0 not in ("subsample", "control_arm"):
            raise ConfigurationError(f"unknown n0 rule {self.n0!r}")

    def matrix(self, k: int) -> np.ndarray:
        if isinstance(self.weight, str):
            if self.weight == "two_step":
                raise ConfigurationError("two_step weight must be resolved by a pilot fit first")
            return np.eye(k)
        if self.weight.shape != (k, k):
            raise ConfigurationError(f"weight matrix is {self.weight.shape}, moments have length {k}")
        return self.weight

    def with_weight(self, w) -> "GmmConfig":
        return GmmConfig(weight=w, n0=self.n0, use_y0_sq=self.use_y0_sq)


# --------------------------------------------------------------------------
# Moment rows


def untreated_probability(index, ids=None, counter: Optional[dict] = None):
    """p(z=0 | .) = logistic(-index) clamped to [1e-12, 1 - 1e-12]."""
    p0 = special.expit(-np.asarray(index, dtype=float))
    if np.any(p0 <= 0.0):
        bad = int(np.flatnonzero(np.atleast_1d(p0) <= 0.0)[0])
        who = ids[bad] if ids is not None else bad
        raise SingularWeightError(f"propensity is numerically 1 for unit {who}")
    clipped = np.clip(p0, PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP)
    if counter is not None:
        counter["clamped"] = counter.get("clamped", 0) + int(np.count_nonzero(clipped != p0))
    return clipped


def moment_rows(y0, x, p0, prob_z0, mean_x, mean_y0, mean_y0_sq=None) -> np.ndarray:
    """Stack of per-unit moment vectors given untreated probabilities ``p0``."""
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    x = np.asarray(x, dtype=float).reshape(y0.size, -1)
    inv = 1.0 / np.atleast_1d(p0)
    cols = [inv - 1.0 / prob_z0, (x - np.asarray(mean_x)) * inv[:, None], ((y0 - mean_y0) * inv)[:, None]]
    cols[0] = cols[0][:, None]
    if mean_y0_sq is not None:
        cols.append(((y0 * y0 - mean_y0_sq) * inv)[:, None])
    return np.hstack(cols)


def moment_vector(y0: float, x, psi: GaussianModelParams, aux: AuxiliaryMoments, use_y0_sq: bool = False) -> np.ndarray:
    """m0(y0, x, psi): length d+2 (d+3 with the quadratic y0 moment)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    aux.require(x.size, use_y0_sq)
    p0 = untreated_probability(psi.propensity_index(y0, x[0]))
    return moment_rows(y0, x[None, :], p0, aux.prob_z0, aux.mean_x, aux.mean_y0, aux.moment_y0_sq if use_y0_sq else None)[0]


def quadratic_objective(mbar: np.ndarray, n0: int, w: np.ndarray) -> float:
    """Q0 = -(N0 / 2) mbar' W mbar."""
    return float(-0.5 * n0 * mbar @ w @ mbar)


class GaussianGmmTerm:
    """Evaluates Q0(psi) for the Gaussian model on a fixed dataset."""

    def __init__(self, data: Dataset, cfg: GmmConfig, aux: AuxiliaryMoments, weight: Optional[np.ndarray] = None):
        aux.require(data.d, cfg.use_y0_sq)
        mask = data.offered_untreated
        if not np.any(mask):
            raise ConfigurationError("GMM moment subsample (r=1, z=0) is empty")
        self.ids = [data.ids[i] for i in np.flatnonzero(mask)]
        self.x = data.x[mask, 0]
        self.y0 = data.y[mask]
        self.aux = aux
        self.cfg = cfg
        self.k = data.d + 2 + int(cfg.use_y0_sq)
        if cfg.n0 == "subsample":
            self.n0 = int(mask.sum())
        else:
            self.n0 = int(data.control_arm.sum())
            if self.n0 == 0:
                raise ConfigurationError("n0='control_arm' but the data has no r=0 units")
        self.w = weight if weight is not None else cfg.matrix(self.k)
        self.counter: dict = {}

    def rows(self, p) -> np.ndarray:
        b0, b1, b2 = p[8], p[9], p[10]
        p0 = untreated_probability(b0 + b1 * self.x + b2 * self.y0, self.ids, self.counter)
        aux = self.aux
        return moment_rows(
            self.y0, self.x, p0, aux.prob_z0, aux.mean_x, aux.mean_y0,
            aux.moment_y0_sq if self.cfg.use_y0_sq else None,
        )

    def __call__(self, p) -> float:
        return quadratic_objective(self.rows(p).mean(axis=0), self.n0, self.w)


def gmm_objective(psi: GaussianModelParams, data: Dataset, cfg: GmmConfig, aux: AuxiliaryMoments) -> float:
    return GaussianGmmTerm(data, cfg, aux)(psi.to_array())


def two_step_weight(rows: np.ndarray, ridge: float = TWO_STEP_RIDGE) -> np.ndarray:
    """Inverse of the empirical moment covariance with a diagonal ridge."""
    rows = np.asarray(rows, dtype=float)
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered / rows.shape[0]
    w = np.linalg.inv(cov + ridge * np.eye(cov.shape[0]))
    return 0.5 * (w + w.T)


def aux_from_control_arm(data: Dataset) -> AuxiliaryMoments:
    arm0 = data.control_arm
    if not np.any(arm0):
        raise AuxiliaryRequiredError("no r=0 units: supply MACRO_GIVEN auxiliary moments")
    offered = data.r
    if not np.any(offered):
        raise ContractError("no r=1 units to estimate P(z=0) from")
    y0 = data.y[arm0]
    return AuxiliaryMoments(
        mean_y0=float(y0.mean()),
        mean_x=data.x[arm0].mean(axis=0),
        prob_z0=float(np.mean(~data.z[offered])),
        moment_y0_sq=float(np.mean(y0 * y0)),
        source=AuxSource.ESTIMATED_FROM_CONTROL_ARM,
    )
