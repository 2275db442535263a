"""Bayesian joint selection of pathways and genes with an MRF gene prior."""
from .graph_data import (Dataset, GeneNetwork, ModelState, PathwayMembership, active_adjacency,
                         load_dataset, load_membership, load_network)
from .likelihood import Hyperparameters, marginal_log_likelihood
from .sampler import ChainConfig, ChainTrace, run_chain

__version__ = "0.1.0"

__all__ = [
    "ChainConfig", "ChainTrace", "Dataset", "GeneNetwork", "Hyperparameters", "ModelState",
    "PathwayMembership", "active_adjacency", "load_dataset", "load_membership", "load_network",
    "marginal_log_likelihood", "run_chain", "__version__",
]
