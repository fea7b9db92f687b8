"""Randomized dynamic programming: top-K plus importance-sampled tail estimators
for Forward, Inside, entropy and backward sampling, with a reverse-mode tape."""

from .autodiff import Tape, Var, gradcheck
from .chain import (
    ChainPotentials,
    brute_force_chain,
    exact_entropy,
    exact_forward,
    gumbel_backward_sample,
    randomized_entropy,
    randomized_forward,
)
from .estimators import MarginalLikelihoodModel, RandomizedForward, RandomizedInside, ToyAutoencoder
from .exceptions import ConfigError, GuardLimitError, NumericalError, RDPError, SelectionMismatchError
from .harness import EstimateReport, TailProfile, evaluate, simulate_chain, simulate_tree
from .hypertree import HypertreePotentials, brute_force_trees, exact_inside, randomized_inside
from .numerics import Rng
from .proposals import chain_proposal, oracle_proposal, tree_proposal, uniform_proposal
from .selection import IndexSelection, SpanSelection, select_chain, select_spans

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Var",
    "gradcheck",
    "ChainPotentials",
    "brute_force_chain",
    "exact_entropy",
    "exact_forward",
    "gumbel_backward_sample",
    "randomized_entropy",
    "randomized_forward",
    "RandomizedForward",
    "RandomizedInside",
    "MarginalLikelihoodModel",
    "ToyAutoencoder",
    "ConfigError",
    "GuardLimitError",
    "NumericalError",
    "RDPError",
    "SelectionMismatchError",
    "EstimateReport",
    "TailProfile",
    "evaluate",
    "simulate_chain",
    "simulate_tree",
    "HypertreePotentials",
    "brute_force_trees",
    "exact_inside",
    "randomized_inside",
    "Rng",
    "chain_proposal",
    "oracle_proposal",
    "tree_proposal",
    "uniform_proposal",
    "IndexSelection",
    "SpanSelection",
    "select_chain",
    "select_spans",
]
