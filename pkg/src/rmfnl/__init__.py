"""Robust low-rank matrix factorization with nonconvex losses.

The outer loop majorizes the loss by a reweighted l1 surrogate, solves the
surrogate through its box-constrained dual with accelerated proximal
gradient, and updates the factors with the recovered increments.
"""

from .errors import (
    AssumptionError,
    ConsistencyError,
    DimensionError,
    NumericalError,
    ParameterError,
    ParseError,
    PenaltyDomainError,
    RmfnlError,
)
from .mm_driver import FitTrace, GaussianInit, ProvidedInit, RmfnlConfig, SpectralInit, fit
from .penalty import Penalty, make_penalty
from .sparse_core import ObservedMatrix, Omega, SparseOnOmega
from .surrogate import FactorPair, objective_value
from .workbench import SyntheticSpec, generate_synthetic, mae, protocol_config, rmse

__version__ = "0.1.0"

__all__ = [
    "AssumptionError",
    "ConsistencyError",
    "DimensionError",
    "NumericalError",
    "ParameterError",
    "ParseError",
    "PenaltyDomainError",
    "RmfnlError",
    "FitTrace",
    "GaussianInit",
    "ProvidedInit",
    "RmfnlConfig",
    "SpectralInit",
    "fit",
    "Penalty",
    "make_penalty",
    "ObservedMatrix",
    "Omega",
    "SparseOnOmega",
    "FactorPair",
    "objective_value",
    "SyntheticSpec",
    "generate_synthetic",
    "mae",
    "protocol_config",
    "rmse",
]
