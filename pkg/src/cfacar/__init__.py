"""Bayesian detection of perturbed pathways with a confirmatory factor model
and a conditional autoregressive prior over a pathway network.
"""

__version__ = "0.1.0"

from .inference import (
    PosteriorSummary,
    bfdr,
    centroid_select,
    gelman_rubin,
    loo_control_validation,
    model_fit_standardize,
    summarize,
    threshold_for_bfdr,
)
from .model import ExpressionDataset, Hyperparameters, LoadingMask, Model, Sample, align_inputs
from .network import GeneSetCollection, PathwayNetwork, build_network, gamma_support, read_gmt
from .sampler import SamplerConfig, run_chain, run_chains

__all__ = [
    "ExpressionDataset",
    "GeneSetCollection",
    "Hyperparameters",
    "LoadingMask",
    "Model",
    "PathwayNetwork",
    "PosteriorSummary",
    "Sample",
    "SamplerConfig",
    "align_inputs",
    "bfdr",
    "build_network",
    "centroid_select",
    "gamma_support",
    "gelman_rubin",
    "loo_control_validation",
    "model_fit_standardize",
    "read_gmt",
    "run_chain",
    "run_chains",
    "summarize",
    "threshold_for_bfdr",
]
