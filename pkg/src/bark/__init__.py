"""Bayesian GP regression with a posterior-sampled forest kernel, and BO on mixed domains."""

from ._backend import BACKEND
from .space import Categorical, Continuous, FeatureSpace, Integer, standardize
from .tree import Tree, sample_tree_prior
from .gp import GpState, PosteriorEnsemble
from .mcmc import SamplerConfig, run_chains

__all__ = [
    "BACKEND",
    "Categorical",
    "Continuous",
    "FeatureSpace",
    "GpState",
    "Integer",
    "PosteriorEnsemble",
    "SamplerConfig",
    "Tree",
    "run_chains",
    "sample_tree_prior",
    "standardize",
]

__version__ = "0.1.0"
