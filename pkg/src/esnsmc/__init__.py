"""Extended skew-normal distributions, tempered-SMC Bayesian estimation,
evidence-based model selection, and the ESN sample-selection model."""

from . import esn, esnsm, model_select, models, normals, priors, smc, summaries
from .errors import (
    ConfigError,
    DataError,
    DegenerateSystemError,
    EsnError,
    InitializationError,
    NumericalError,
    ParameterDomainError,
    UnsupportedDimensionError,
)
from .esn import EsnParamsP1, EsnParamsP2, MomentSummary
from .esnsm import CovariateSpec, EsnsmData, EsnsmHyper, EsnsmParams
from .model_select import EvidenceComparison
from .priors import HyperParamsP1, HyperParamsP2, default_hyper
from .smc import GaussianInit, ParticleSystem, SmcConfig, SmcResult, TargetModel

__all__ = [
    "esn",
    "esnsm",
    "model_select",
    "models",
    "normals",
    "priors",
    "smc",
    "summaries",
    "EsnParamsP1",
    "EsnParamsP2",
    "MomentSummary",
    "EsnsmParams",
    "EsnsmData",
    "EsnsmHyper",
    "CovariateSpec",
    "EvidenceComparison",
    "HyperParamsP1",
    "HyperParamsP2",
    "default_hyper",
    "GaussianInit",
    "TargetModel",
    "ParticleSystem",
    "SmcConfig",
    "SmcResult",
    "EsnError",
    "ParameterDomainError",
    "UnsupportedDimensionError",
    "DataError",
    "ConfigError",
    "NumericalError",
    "InitializationError",
    "DegenerateSystemError",
]

__version__ = "0.1.0"
