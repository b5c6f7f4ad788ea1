"""Probit stick-breaking mixtures with low-rank multiway coefficients for clustered binomial data."""

from tensorstick.model import Dataset, ModelConfig, ParamState, StickWeights
from tensorstick.gibbs import ChainConfig, DrawStore, run_chain
from tensorstick.predictive import CvReport, cross_validate

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "CvReport",
    "Dataset",
    "DrawStore",
    "ModelConfig",
    "ParamState",
    "StickWeights",
    "cross_validate",
    "run_chain",
]
