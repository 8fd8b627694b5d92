"""Heterogeneous treatment effects under weak ignorability with an extended propensity score."""

from .model import Dataset, GaussianModelParams, Setup, UnitRecord
from .simulate import SimulationConfig, simulate

__version__ = "0.1.0"

__all__ = ["Dataset", "GaussianModelParams", "Setup", "UnitRecord", "SimulationConfig", "simulate", "__version__"]
