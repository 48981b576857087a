"""Bayesian mixed-effects beta regression.

The package is organised in layers: density kernels (:mod:`distributions`),
the model and its likelihood (:mod:`model`), priors (:mod:`priors`), the
Metropolis-within-Gibbs sampler (:mod:`sampler`), convergence diagnostics
(:mod:`diagnostics`), model-comparison criteria (:mod:`criteria`), simulation
(:mod:`simulate`), the model-specification language (:mod:`specdsl`) and the
command line (:mod:`cli`).
"""
__version__ = "0.1.0"

from .model import DomainError, GroupedDataset, ModelSpec, ParamState, log_likelihood
from .priors import PRIOR_PRESETS, PriorCatalog
from .sampler import SamplerConfig, SamplerError, Trace, run_chain, run_ensemble
from .criteria import compute_criteria
from .diagnostics import diagnose, summarize

__all__ = [
    "__version__",
    "DomainError",
    "GroupedDataset",
    "ModelSpec",
    "ParamState",
    "log_likelihood",
    "PRIOR_PRESETS",
    "PriorCatalog",
    "SamplerConfig",
    "SamplerError",
    "Trace",
    "run_chain",
    "run_ensemble",
    "compute_criteria",
    "diagnose",
    "summarize",
]
