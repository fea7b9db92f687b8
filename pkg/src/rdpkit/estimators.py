"""scikit-learn style wrappers.

Inputs are collections of potentials (or single instances) rather than
feature matrices, so these estimators follow the ``fit``/``predict``/
``transform``/``score`` and ``get_params``/``set_params`` conventions without
being usable inside sklearn pipelines that expect arrays.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .chain import ChainPotentials, randomized_entropy, randomized_forward
from .exceptions import ConfigError
from .harness import build_proposal, exact_quantity
from .hypertree import HypertreePotentials, randomized_inside
from .numerics import Rng
from .selection import select_chain, select_spans
from .train import TrainConfig, exact_nll, fit_marginal_likelihood, fit_toy_autoencoder

__all__ = ["RandomizedForward", "RandomizedInside", "MarginalLikelihoodModel", "ToyAutoencoder"]


def _as_list(X, kind):
    if isinstance(X, kind):
        items = [X]
    else:
        try:
            items = list(X)
        except TypeError:
            items = [X]
    if not items or not all(isinstance(p, kind) for p in items):
        raise ConfigError(f"expected {kind.__name__} or a non-empty sequence of them")
    return items


class _RandomizedDP(BaseEstimator):
    _kind = None

    def _check_counts(self, pot):
        if self.k1 < 0 or self.k2 < 0 or self.k1 + self.k2 == 0:
            raise ConfigError("need K1, K2 >= 0 with K1 + K2 > 0")
        if self.k1 + self.k2 > pot.N:
            raise ConfigError(f"K1 + K2 = {self.k1 + self.k2} exceeds N = {pot.N}")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")

    def fit(self, X, y=None):
        """Validate the configuration against the instances; nothing is learned."""
        items = _as_list(X, self._kind)
        for pot in items:
            self._check_counts(pot)
        self.n_instances_ = len(items)
        self.n_states_ = items[0].N
        return self

    def transform(self, X) -> np.ndarray:
        """``(n_instances, n_runs)`` replicate estimates; replicate ``r`` of instance ``i`` uses ``Rng(seed).child(i, r)``."""
        items = _as_list(X, self._kind)
        out = np.empty((len(items), self.n_runs))
        root = Rng(self.random_state)
        for i, pot in enumerate(items):
            self._check_counts(pot)
            pot = pot.numpy()
            q = build_proposal(pot, self.proposal, self.mix)
            for r in range(self.n_runs):
                out[i, r] = self._estimate(pot, q, root.child(i, r))
        return out

    def predict(self, X) -> np.ndarray:
        """Mean of the replicate estimates per instance."""
        return self.transform(X).mean(axis=1)

    def score(self, X, y=None) -> float:
        """Negative mean squared error against the exact quantity (higher is better)."""
        items = _as_list(X, self._kind)
        exact = np.array([exact_quantity(p, self._quantity()) for p in items]) if y is None else np.asarray(y)
        est = self.transform(items)
        return -float(np.mean((est - exact[:, None]) ** 2))


class RandomizedForward(_RandomizedDP):
    """Randomized Forward (``quantity="logz"``) or Entropy DP (``"entropy"``) on chains.

    ``k2=0`` is the deterministic top-K baseline.
    """

    _kind = ChainPotentials

    def __init__(self, k1=0, k2=1, proposal="local-global", mix=0.5, quantity="logz", n_runs=1, random_state=0):
        self.k1 = k1
        self.k2 = k2
        self.proposal = proposal
        self.mix = mix
        self.quantity = quantity
        self.n_runs = n_runs
        self.random_state = random_state

    def _quantity(self):
        if self.quantity not in ("logz", "entropy"):
            raise ConfigError(f"unknown quantity {self.quantity!r}")
        return self.quantity

    def _estimate(self, pot, q, rng):
        sel = select_chain(q, self.k1, self.k2, rng)
        log_z, alphas = randomized_forward(pot, sel)
        if self._quantity() == "logz":
            return float(log_z)
        return float(randomized_entropy(pot, sel, alphas, log_z))


class RandomizedInside(_RandomizedDP):
    """Randomized Inside estimate of ``log Z`` on span-factored trees."""

    _kind = HypertreePotentials

    def __init__(self, k1=0, k2=1, proposal="uniform", mix=0.5, blocks="full_cross", n_runs=1, random_state=0):
        self.k1 = k1
        self.k2 = k2
        self.proposal = proposal
        self.mix = mix
        self.blocks = blocks
        self.n_runs = n_runs
        self.random_state = random_state

    def _quantity(self):
        return "logz"

    def _estimate(self, pot, q, rng):
        sel = select_spans(q, self.k1, self.k2, rng)
        return float(randomized_inside(pot, sel, blocks=self.blocks)[0])


class _TrainedChain(BaseEstimator):
    def _config(self) -> TrainConfig:
        return TrainConfig(
            estimator=self.estimator,
            k1=self.k1,
            k2=self.k2,
            steps=self.steps,
            learning_rate=self.learning_rate,
            seed=self.random_state,
            proposal=self.proposal,
            **self._extra_config(),
        )

    def _extra_config(self) -> dict:
        return {}


class MarginalLikelihoodModel(_TrainedChain):
    """Embedding-factored chain fitted by gradient ascent on the marginal likelihood.

    ``fit(X, context_features=...)`` takes an integer array (sequences, length).
    """

    def __init__(
        self,
        n_states=20,
        estimator="rdp",
        k1=3,
        k2=1,
        steps=100,
        learning_rate=0.05,
        proposal="local-global",
        random_state=0,
    ):
        self.n_states = n_states
        self.estimator = estimator
        self.k1 = k1
        self.k2 = k2
        self.steps = steps
        self.learning_rate = learning_rate
        self.proposal = proposal
        self.random_state = random_state

    def fit(self, X, y=None, context_features=None):
        if context_features is None:
            raise ConfigError("context_features is required")
        fit = fit_marginal_likelihood(X, self.n_states, context_features, self._config())
        self.params_ = fit.params
        self.nll_curve_ = fit.nll
        return self

    def transform(self, X) -> np.ndarray:
        """Exact per-sequence negative log-likelihood."""
        return np.array([exact_nll(self.params_, [row]) for row in np.asarray(X)])

    def score(self, X, y=None) -> float:
        """Mean exact log-likelihood per sequence."""
        return -exact_nll(self.params_, X)


class ToyAutoencoder(_TrainedChain):
    """Chain inference network plus categorical decoder trained on the randomized ELBO."""

    def __init__(
        self,
        n_states=20,
        estimator="rdp",
        k1=2,
        k2=2,
        steps=50,
        learning_rate=0.05,
        proposal="local-global",
        temperature=1.0,
        straight_through=False,
        random_state=0,
    ):
        self.n_states = n_states
        self.estimator = estimator
        self.k1 = k1
        self.k2 = k2
        self.steps = steps
        self.learning_rate = learning_rate
        self.proposal = proposal
        self.temperature = temperature
        self.straight_through = straight_through
        self.random_state = random_state

    def _extra_config(self) -> dict:
        return {"temperature": self.temperature, "straight_through": self.straight_through}

    def fit(self, X, y=None, context_features=None):
        if context_features is None:
            raise ConfigError("context_features is required")
        fit = fit_toy_autoencoder(X, self.n_states, context_features, self._config())
        self.encoder_ = fit.encoder
        self.decoder_ = fit.decoder
        self.elbo_curve_ = fit.elbo
        self.histogram_ = fit.histogram
        self.never_used_ = fit.never_used
        self.tail_mass_ = fit.tail_mass
        return self

    def score(self, X=None, y=None) -> float:
        """Final training ELBO estimate."""
        return float(self.elbo_curve_[-1])
