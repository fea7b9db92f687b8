"""Input validation helpers shared by the DP modules and estimators."""

from __future__ import annotations

import numpy as np

from .autodiff import Var, value_of
from .exceptions import ConfigError


def check_log_weights(values, name: str, shape=None) -> None:
    """Log-space arrays: never NaN, never +inf; -inf encodes exact zero."""
    v = value_of(values)
    if shape is not None and v.shape != tuple(shape):
        raise ConfigError(f"{name} has shape {v.shape}, expected {tuple(shape)}")
    if np.isnan(v).any():
        raise ConfigError(f"{name} contains NaN")
    if np.isposinf(v).any():
        raise ConfigError(f"{name} contains +inf")


def check_chain_arrays(init, pairwise) -> tuple[int, int]:
    iv, pv = value_of(init), value_of(pairwise)
    if iv.ndim != 1 or iv.shape[0] < 1:
        raise ConfigError(f"init must be a non-empty vector, got shape {iv.shape}")
    n = iv.shape[0]
    if pv.ndim != 3 or pv.shape[1:] != (n, n):
        raise ConfigError(f"pairwise must have shape (T-1, {n}, {n}), got {pv.shape}")
    check_log_weights(iv, "init")
    check_log_weights(pv, "pairwise")
    return pv.shape[0] + 1, n


def check_span_array(spans) -> tuple[int, int]:
    sv = value_of(spans)
    if sv.ndim != 3 or sv.shape[0] != sv.shape[1] or sv.shape[0] < 1 or sv.shape[2] < 1:
        raise ConfigError(f"span potentials must have shape (T, T, N), got {sv.shape}")
    t = sv.shape[0]
    upper = sv[np.triu_indices(t)]
    check_log_weights(upper, "span potentials")
    return t, sv.shape[2]


def check_counts(n_states: int, k1: int, k2: int) -> None:
    for name, k in (("K1", k1), ("K2", k2)):
        if int(k) != k or k < 0:
            raise ConfigError(f"{name} must be a non-negative integer, got {k}")
    if k1 + k2 > n_states:
        raise ConfigError(f"K exceeds N: K1 + K2 = {k1 + k2} > N = {n_states}")


def check_proposal(weights, n_nodes: int | None = None, n_states: int | None = None) -> np.ndarray:
    """Rows of ``weights`` must be distributions over states."""
    q = np.asarray(weights, dtype=np.float64)
    if q.ndim != 2:
        raise ConfigError(f"proposal must be 2-D (nodes, N), got shape {q.shape}")
    if n_nodes is not None and q.shape[0] != n_nodes:
        raise ConfigError(f"proposal has {q.shape[0]} nodes, expected {n_nodes}")
    if n_states is not None and q.shape[1] != n_states:
        raise ConfigError(f"proposal has {q.shape[1]} states, expected {n_states}")
    if not np.isfinite(q).all() or (q < 0).any():
        raise ConfigError("proposal weights must be finite and non-negative")
    if not np.allclose(q.sum(axis=1), 1.0, rtol=0, atol=1e-12):
        raise ConfigError("proposal rows must sum to 1")
    return q


def check_temperature(temperature: float) -> float:
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    return float(temperature)


def is_var(x) -> bool:
    return isinstance(x, Var)
