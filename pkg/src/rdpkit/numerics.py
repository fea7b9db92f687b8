"""Log-space arithmetic, seeded random streams, top-K selection and tail sampling."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, DegenerateTailError

__all__ = [
    "Rng",
    "logsumexp",
    "topk_indices",
    "sample_tail",
    "gumbel_noise",
    "LOG_TINY",
]

# log(1e-300); floor applied before taking log of a probability
LOG_TINY = float(np.log(1e-300))

_U64 = (1 << 64) - 1


class Rng:
    """Splittable seeded random stream.

    Streams are keyed by ``(seed, key)``: ``Rng(7).child(3)`` always yields the
    same draws regardless of what other children were created or consumed
    before it, which makes per-node and per-replicate sampling independent of
    evaluation order and of the number of workers. Backed by numpy's
    counter-based Philox generator seeded through ``SeedSequence``.
    """

    __slots__ = ("seed", "key", "_generator")

    def __init__(self, seed: int = 0, key: tuple[int, ...] = ()):
        if int(seed) < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed) & _U64
        self.key = tuple(int(k) for k in key)
        self._generator = None

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
            self._generator = np.random.Generator(np.random.Philox(ss))
        return self._generator

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, self.key + tuple(key))

    def uniform_open(self, shape) -> np.ndarray:
        """Uniform draws on the open interval (0, 1)."""
        bits = self.generator.integers(0, 1 << 53, size=shape, dtype=np.int64)
        return (bits.astype(np.float64) + 0.5) / float(1 << 53)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"


def as_rng(random_state) -> Rng:
    """Coerce ``None``, an int seed or an :class:`Rng` into an :class:`Rng`."""
    if isinstance(random_state, Rng):
        return random_state
    if random_state is None:
        return Rng(0)
    if isinstance(random_state, (int, np.integer)):
        return Rng(int(random_state))
    raise ConfigError(f"cannot interpret {random_state!r} as a random stream")


def logsumexp(values, axis=None):
    """Stable ``log(sum(exp(values)))`` with max-shift.

    ``-inf`` entries encode exact zeros; an all ``-inf`` reduction gives ``-inf``.
    """
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        raise ConfigError("empty reduction")
    m = np.max(a, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def topk_indices(weights, k1: int) -> np.ndarray:
    """Indices of the ``k1`` largest weights, ties broken by ascending index."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    if k1 < 0 or k1 > n:
        raise ConfigError(f"K1={k1} must lie in [0, {n}]")
    if np.isnan(w).any():
        raise ConfigError("weights contain NaN")
    return np.argsort(-w, kind="stable")[:k1].astype(np.intp)


def sample_tail(weights, topk, k2: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``k2`` i.i.d. indices from the proposal renormalized outside ``topk``.

    Returns ``(indices, tail_probs)`` where ``tail_probs[i]`` is the
    renormalized probability of ``indices[i]``. Duplicates are kept.
    """
    w = np.asarray(weights, dtype=np.float64)
    if k2 < 0:
        raise ConfigError(f"K2 must be non-negative, got {k2}")
    if (w < 0).any() or not np.isfinite(w).all():
        raise ConfigError("proposal weights must be finite and non-negative")
    empty = np.empty(0, dtype=np.intp), np.empty(0, dtype=np.float64)
    if k2 == 0:
        return empty
    mask = np.ones(w.shape[0], dtype=bool)
    mask[np.asarray(topk, dtype=np.intp)] = False
    tail = np.flatnonzero(mask)
    mass = w[tail].sum()
    if tail.size == 0 or not mass > 0:
        raise DegenerateTailError("degenerate tail")
    probs = w[tail] / mass
    pos = rng.generator.choice(tail.size, size=k2, replace=True, p=probs)
    return tail[pos].astype(np.intp), probs[pos]


def gumbel_noise(rng: Rng, shape) -> np.ndarray:
    """Standard Gumbel(0, 1) draws, ``-log(-log(u))`` with ``u`` in (0, 1)."""
    u = rng.uniform_open(shape)
    return -np.log(-np.log(u))
