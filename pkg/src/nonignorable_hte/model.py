"""Data model, parameter bundles and true-estimand oracles.

Datasets are stored column-wise. Which potential outcome is observed is
fully determined by ``(r, z)``: the offered-and-treated units (r=1, z=1)
reveal y1, every other unit reveals y0, and z is only recorded for r=1.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .core import logistic


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    """Input violates an operation's precondition (missingness pattern, support)."""


class Setup(str, enum.Enum):
    RCT_ONE_SIDED = "RCT_ONE_SIDED"
    OBS_MICRO = "OBS_MICRO"
    OBS_MACRO = "OBS_MACRO"


@dataclass(frozen=True)
class UnitRecord:
    id: str
    x: tuple
    r: int
    z: Optional[int]
    y1: Optional[float]
    y0: Optional[float]

    def validate(self) -> None:
        if self.r not in (0, 1):
            raise ContractError(f"unit {self.id}: r must be 0 or 1")
        if self.r == 0:
            if self.z is not None or self.y1 is not None or self.y0 is None:
                raise ContractError(f"unit {self.id}: r=0 requires z=NA, y1=NA and observed y0")
            return
        if self.z not in (0, 1):
            raise ContractError(f"unit {self.id}: r=1 requires z in {{0, 1}}")
        if self.z == 1 and (self.y1 is None or self.y0 is not None):
            raise ContractError(f"unit {self.id}: r=1, z=1 requires observed y1 and y0=NA")
        if self.z == 0 and (self.y0 is None or self.y1 is not None):
            raise ContractError(f"unit {self.id}: r=1, z=0 requires observed y0 and y1=NA")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-wise study data.

    ``y`` holds the realized outcome: y1 for (r=1, z=1) units and y0 otherwise.
    ``z`` is False wherever r=0 (one-sided noncompliance).
    """

    ids: tuple
    x: np.ndarray
    r: np.ndarray
    z: np.ndarray
    y: np.ndarray
    setup: Setup = Setup.RCT_ONE_SIDED
    aux: Optional[object] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = x.shape[0]
        r = np.asarray(self.r, dtype=bool).reshape(-1)
        z = np.asarray(self.z, dtype=bool).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if not (len(self.ids) == r.size == z.size == y.size == n):
            raise ShapeError("ids, x, r, z and y must have the same number of units")
        if np.any(z & ~r):
            raise ContractError("z=1 recorded for an r=0 unit (one-sided noncompliance)")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise ContractError("outcomes and covariates must be finite")
        setup = Setup(self.setup)
        if setup is Setup.OBS_MACRO and self.aux is None:
            raise ContractError("setup OBS_MACRO requires auxiliary moments")
        for name, value in (("x", x), ("r", r), ("z", z), ("y", y)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "setup", setup)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def treated(self) -> np.ndarray:
        """r=1, z=1: y1 observed, y0 missing."""
        return self.r & self.z

    @property
    def offered_untreated(self) -> np.ndarray:
        """r=1, z=0."""
        return self.r & ~self.z

    @property
    def control_arm(self) -> np.ndarray:
        return ~self.r

    @property
    def y0_observed(self) -> np.ndarray:
        return ~self.treated

    def subset(self, mask) -> "Dataset":
        idx = np.flatnonzero(mask)
        return Dataset(
            ids=tuple(self.ids[i] for i in idx),
            x=self.x[idx],
            r=self.r[idx],
            z=self.z[idx],
            y=self.y[idx],
            setup=self.setup,
            aux=self.aux,
        )

    def permuted(self, order) -> "Dataset":
        order = np.asarray(order)
        return Dataset(
            ids=tuple(self.ids[i] for i in order),
            x=self.x[order],
            r=self.r[order],
            z=self.z[order],
            y=self.y[order],
            setup=self.setup,
            aux=self.aux,
        )

    def with_aux(self, aux) -> "Dataset":
        return Dataset(self.ids, self.x, self.r, self.z, self.y, self.setup, aux)

    @property
    def units(self) -> list[UnitRecord]:
        out = []
        for i in range(self.n):
            x = tuple(float(v) for v in self.x[i])
            yi = float(self.y[i])
            if not self.r[i]:
                out.append(UnitRecord(self.ids[i], x, 0, None, None, yi))
            elif self.z[i]:
                out.append(UnitRecord(self.ids[i], x, 1, 1, yi, None))
            else:
                out.append(UnitRecord(self.ids[i], x, 1, 0, None, yi))
        return out

    @classmethod
    def from_units(cls, units: Sequence[UnitRecord], setup=Setup.RCT_ONE_SIDED, aux=None, d=None) -> "Dataset":
        units = list(units)
        for u in units:
            u.validate()
        dims = {len(u.x) for u in units}
        if len(dims) > 1:
            raise ShapeError(f"units disagree on covariate dimension: {sorted(dims)}")
        if d is None:
            d = dims.pop() if dims else 1
        elif dims and dims.pop() != d:
            raise ShapeError("covariate dimension does not match d")
        x = np.array([u.x for u in units], dtype=float).reshape(len(units), d)
        r = np.array([u.r for u in units], dtype=bool)
        z = np.array([bool(u.z) for u in units], dtype=bool)
        y = np.array([u.y1 if (u.r == 1 and u.z == 1) else u.y0 for u in units], dtype=float)
        return cls(tuple(u.id for u in units), x, r, z, y, setup, aux)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.ids == other.ids
            and self.setup == other.setup
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.r, other.r)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.y, other.y)
        )


# --------------------------------------------------------------------------
# Gaussian model


@dataclass(frozen=True)
class GaussianModelParams:
    """Parameters of the Gaussian outcome model with a scalar covariate.

    mu0(x) = theta00 + theta01 x
    mu1(y0, x) = theta10 + theta11 x + theta12 y0 + theta13 y0^2
    p(z=1 | y0, x) = logistic(beta0 + beta1 x + beta2 y0)
    """

    theta00: float
    theta01: float
    theta10: float
    theta11: float
    theta12: float
    theta13: float
    sigma0: float
    sigma1: float
    beta0: float
    beta1: float
    beta2: float

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.sigma1 > 0):
            raise ContractError("sigma0 and sigma1 must be positive")

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def simulation_design(cls) -> "GaussianModelParams":
        return cls(1.0, 0.6, 1.5, 0.5, 0.6, -0.2, 0.5, 0.6, -1.2, 0.8, 0.6)

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names()], dtype=float)

    @classmethod
    def from_array(cls, values) -> "GaussianModelParams":
        return cls(*(float(v) for v in values))

    def replace(self, **changes) -> "GaussianModelParams":
        values = {n: getattr(self, n) for n in self.names()}
        values.update(changes)
        return GaussianModelParams(**values)

    def mu0(self, x):
        return self.theta00 + self.theta01 * np.asarray(x, dtype=float)

    def mu1(self, y0, x):
        y0 = np.asarray(y0, dtype=float)
        return self.theta10 + self.theta11 * np.asarray(x, dtype=float) + self.theta12 * y0 + self.theta13 * y0 * y0

    def propensity_index(self, y0, x):
        return self.beta0 + self.beta1 * np.asarray(x, dtype=float) + self.beta2 * np.asarray(y0, dtype=float)

    def propensity_score(self) -> "ExtendedPropensityScore":
        return ExtendedPropensityScore(k0=self.beta0, theta_y0=self.beta2, x_coefficients=(self.beta1,))


# --------------------------------------------------------------------------
# Extended propensity score

Y0_BASES: dict[str, Callable] = {
    "quadratic": lambda y: y * y,
    "cubic": lambda y: y * y * y,
}


@dataclass(frozen=True)
class ExtendedPropensityScore:
    """p(z=1 | y0, x) = logistic(k0 + k_y0(y0) + k_x(x)) with an additive index.

    ``k_y0(y0) = theta_y0 * y0 + sum(c * basis(y0))`` where every basis
    vanishes at zero, and ``k_x(x) = x @ x_coefficients``. No term mixes
    y0 and x.
    """

    k0: float
    theta_y0: float
    x_coefficients: tuple
    extra_y0_basis: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "x_coefficients", tuple(float(c) for c in np.atleast_1d(self.x_coefficients)))
        for name, _ in self.extra_y0_basis:
            if name not in Y0_BASES:
                raise ContractError(f"unknown y0 basis {name!r}")

    @property
    def d(self) -> int:
        return len(self.x_coefficients)

    def k_y0(self, y0):
        y0 = np.asarray(y0, dtype=float)
        out = self.theta_y0 * y0
        for name, coef in self.extra_y0_basis:
            out = out + coef * Y0_BASES[name](y0)
        return out

    def k_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ShapeError(f"x has dimension {x.shape[-1]}, expected {self.d}")
        return x @ np.asarray(self.x_coefficients)

    def log_odds(self, y0, x):
        return self.k0 + self.k_y0(y0) + self.k_x(x)

    def __call__(self, y0, x):
        return logistic(self.log_odds(y0, x))


def extended_propensity(y0, x, eps: ExtendedPropensityScore):
    return eps(y0, x)


# --------------------------------------------------------------------------
# True estimands of the Gaussian simulation design


@dataclass(frozen=True)
class TrueEstimands:
    ate: float
    hte: Callable
    att_mc: float
    atu_mc: float
    ate_mc: float
    prob_z1_mc: float


def closed_form_ate(dgp: GaussianModelParams, x_sd: float = 1.5, x_mean: float = 0.0) -> float:
    """E[y1 - y0] using E[y0^2] = Var(y0) + E[y0]^2 under the Gaussian design."""
    p = dgp
    mean_y0 = p.theta00 + p.theta01 * x_mean
    var_y0 = p.theta01**2 * x_sd**2 + p.sigma0**2
    return float(p.theta10 + p.theta11 * x_mean + p.theta12 * mean_y0 + p.theta13 * (var_y0 + mean_y0**2) - mean_y0)


def true_estimand_oracle(
    dgp: GaussianModelParams,
    x_sd: float = 1.5,
    x_mean: float = 0.0,
    mc_draws: int = 1_000_000,
    seed: int = 20240101,
) -> TrueEstimands:
    """Closed-form ATE and HTE plus Monte Carlo ATT/ATU for x ~ Normal(x_mean, x_sd^2)."""
    if x_sd <= 0:
        raise ContractError("x_sd must be positive")
    p = dgp
    mean_y0 = p.theta00 + p.theta01 * x_mean
    var_y0 = p.theta01**2 * x_sd**2 + p.sigma0**2
    ate = closed_form_ate(p, x_sd, x_mean)
    slope = p.theta01 * x_sd**2 / var_y0

    def hte(y0):
        y0 = np.asarray(y0, dtype=float)
        ex = x_mean + slope * (y0 - mean_y0)
        out = p.theta10 + p.theta11 * ex + p.theta12 * y0 + p.theta13 * y0 * y0 - y0
        return float(out) if out.ndim == 0 else out

    rng = np.random.default_rng(seed)
    x = rng.normal(x_mean, x_sd, mc_draws)
    y0 = p.mu0(x) + p.sigma0 * rng.standard_normal(mc_draws)
    y1 = p.mu1(y0, x) + p.sigma1 * rng.standard_normal(mc_draws)
    z = rng.random(mc_draws) < logistic(p.propensity_index(y0, x))
    effect = y1 - y0
    return TrueEstimands(
        ate=float(ate),
        hte=hte,
        att_mc=float(effect[z].mean()),
        atu_mc=float(effect[~z].mean()),
        ate_mc=float(effect.mean()),
        prob_z1_mc=float(z.mean()),
    )
