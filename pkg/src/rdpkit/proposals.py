"""Proposal distributions over states, one row per DP node."""

from __future__ import annotations

import numpy as np

from .autodiff import value_of
from .chain import ChainPotentials, backward_messages, exact_forward
from .exceptions import ConfigError, NumericalError
from .hypertree import HypertreePotentials

__all__ = [
    "PROPOSALS",
    "uniform_proposal",
    "local_global_proposal",
    "oracle_proposal",
    "chain_proposal",
    "tree_proposal",
]

PROPOSALS = ("uniform", "local", "global", "local-global", "oracle")


def _normalize_rows(w: np.ndarray, what: str) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if not np.isfinite(w).all() or (w < 0).any():
        raise ConfigError(f"{what} must be finite and non-negative")
    tot = w.sum(axis=-1, keepdims=True)
    if (tot <= 0).any():
        raise ConfigError(f"{what} has a zero total")
    return w / tot


def _softmax_rows(logw: np.ndarray) -> np.ndarray:
    logw = np.asarray(logw, dtype=np.float64)
    m = logw.max(axis=-1, keepdims=True)
    return _normalize_rows(np.exp(logw - m), "local weights")


def uniform_proposal(n_states: int, nodes=1) -> np.ndarray:
    """Every node uniform over ``n_states``; ``nodes`` is a count or a shape tuple."""
    if n_states < 1:
        raise ConfigError("uniform proposal needs N >= 1")
    shape = (nodes,) if np.isscalar(nodes) else tuple(nodes)
    return np.full(shape + (n_states,), 1.0 / n_states)


def local_global_proposal(emissions, embedding_norms, mix: float = 0.5) -> np.ndarray:
    """``mix * normalized(local) + (1 - mix) * normalized(global)``.

    ``emissions`` holds non-negative local weights per node (nodes, N);
    ``embedding_norms`` a non-negative global weight per state. ``mix=0.5`` is
    the even split of local emissions and embedding norms; ``mix=1`` uses the
    local term only and ``mix=0`` the global term only.
    """
    if not 0.0 <= mix <= 1.0:
        raise ConfigError(f"mix must lie in [0, 1], got {mix}")
    emissions = np.atleast_2d(np.asarray(emissions, dtype=np.float64))
    norms = np.asarray(embedding_norms, dtype=np.float64)
    if norms.shape != emissions.shape[-1:]:
        raise ConfigError("embedding_norms must have one entry per state")
    local = _normalize_rows(emissions, "emissions") if mix > 0 else 0.0
    glob = _normalize_rows(norms, "embedding norms") if mix < 1 else 0.0
    return mix * local + (1.0 - mix) * np.broadcast_to(glob, emissions.shape)


def oracle_proposal(potentials: ChainPotentials, alphas=None) -> np.ndarray:
    """Per-step proposal proportional to each state's exact contribution to Z.

    Row ``t`` is ``alpha_t(j) * beta_t(j) / Z``, the mass of all paths through
    ``j`` at step ``t``. When outgoing potentials are rank one this equals the
    normalized summands of every next-step message, and the randomized forward
    estimate has zero variance.
    """
    pot = potentials.numpy()
    if alphas is None or not all(s.size == pot.N for s in alphas.states):
        _, alphas = exact_forward(pot)
    log_alpha = np.stack([value_of(a) for a in alphas.log_alpha])
    log_marg = log_alpha + np.stack(backward_messages(pot))
    m = log_marg.max(axis=1, keepdims=True)
    if not np.isfinite(m).all():
        raise NumericalError("degenerate step: no state carries mass")
    return _normalize_rows(np.exp(log_marg - m), "oracle weights")


def _chain_local(pot: ChainPotentials) -> np.ndarray:
    if pot.emissions is not None:
        return _softmax_rows(pot.emissions)
    from .autodiff import logsumexp

    pw = value_of(pot.pairwise)
    rows = [value_of(pot.init)] + [value_of(logsumexp(pw[t], axis=0)) for t in range(pot.T - 1)]
    return _softmax_rows(np.stack(rows))


def chain_proposal(potentials: ChainPotentials, name: str = "local-global", mix: float = 0.5) -> np.ndarray:
    """Build a (T, N) proposal by name from the potentials and their side information."""
    T, N = potentials.T, potentials.N
    if name == "uniform":
        return uniform_proposal(N, T)
    if name == "oracle":
        return oracle_proposal(potentials)
    local = _chain_local(potentials)
    prior = potentials.state_prior if potentials.state_prior is not None else local.mean(axis=0)
    if name == "local":
        return local_global_proposal(local, prior, mix=1.0)
    if name == "global":
        return local_global_proposal(local, prior, mix=0.0)
    if name == "local-global":
        return local_global_proposal(local, prior, mix=mix)
    raise ConfigError(f"unknown proposal {name!r}; choose from {PROPOSALS}")


def tree_proposal(potentials: HypertreePotentials, name: str = "uniform", mix: float = 0.5) -> np.ndarray:
    """Build a (T, T, N) per-span proposal; local weights are each span's own potentials."""
    T, N = potentials.T, potentials.N
    if name == "uniform":
        return uniform_proposal(N, (T, T))
    if name == "oracle":
        raise ConfigError("the oracle proposal is defined for chains only")
    sv = value_of(potentials.spans).copy()
    sv[np.tril_indices(T, -1)] = 0.0
    local = _softmax_rows(sv.reshape(T * T, N))
    prior = potentials.label_prior if potentials.label_prior is not None else local.mean(axis=0)
    mixes = {"local": 1.0, "global": 0.0, "local-global": mix}
    if name not in mixes:
        raise ConfigError(f"unknown proposal {name!r}; choose from {PROPOSALS}")
    return local_global_proposal(local, prior, mix=mixes[name]).reshape(T, T, N)
