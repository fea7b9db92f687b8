"""Per-node index selections: top-K1 states plus K2 importance-weighted tail draws."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DegenerateTailError
from .numerics import Rng, sample_tail, topk_indices
from .validation import check_counts, check_proposal

__all__ = ["NodeDraw", "IndexSelection", "SpanSelection", "draw_node", "select_chain", "select_spans"]


@dataclass(frozen=True, eq=False)
class NodeDraw:
    """Selection at a single DP node.

    ``topk`` are summed exactly; each entry of ``sampled`` carries weight
    ``1 / (len(sampled) * tail_prob)``. Duplicate draws are merged in
    :meth:`active` by adding their weights.
    """

    topk: np.ndarray
    sampled: np.ndarray
    tail_probs: np.ndarray
    _active: tuple = field(init=False, repr=False)

    def __post_init__(self):
        topk = np.asarray(self.topk, dtype=np.intp)
        sampled = np.asarray(self.sampled, dtype=np.intp)
        probs = np.asarray(self.tail_probs, dtype=np.float64)
        object.__setattr__(self, "topk", topk)
        object.__setattr__(self, "sampled", sampled)
        object.__setattr__(self, "tail_probs", probs)
        if sampled.shape != probs.shape:
            raise ConfigError("sampled indices and tail probabilities differ in length")
        if np.unique(topk).size != topk.size:
            raise ConfigError("top-K indices must be distinct")
        if probs.size and not ((probs > 0) & (probs <= 1)).all():
            raise ConfigError("tail probabilities must lie in (0, 1]")
        if np.intersect1d(topk, sampled).size:
            raise ConfigError("sampled indices must lie outside the top-K set")
        uniq, first, counts = np.unique(sampled, return_index=True, return_counts=True)
        log_w = np.log(counts / (sampled.size * probs[first])) if sampled.size else np.empty(0)
        states = np.concatenate([topk, uniq]).astype(np.intp)
        if states.size == 0:
            raise ConfigError("empty active set")
        log_weights = np.concatenate([np.zeros(topk.size), log_w])
        object.__setattr__(self, "_active", (states, log_weights))

    def active(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct active states and their log importance weights."""
        return self._active

    @property
    def size(self) -> int:
        return self._active[0].size


def draw_node(weights, k1: int, k2: int, rng: Rng) -> NodeDraw:
    """Top-``k1`` by proposal weight, then ``k2`` i.i.d. tail draws.

    A tail with no proposal mass falls back to ``k2 = 0`` at this node.
    """
    top = topk_indices(weights, k1)
    try:
        sampled, probs = sample_tail(weights, top, k2, rng)
    except DegenerateTailError:
        sampled, probs = np.empty(0, dtype=np.intp), np.empty(0)
    return NodeDraw(top, sampled, probs)


def _full_node(n: int) -> NodeDraw:
    return NodeDraw(np.arange(n), np.empty(0, dtype=np.intp), np.empty(0))


def _hash_nodes(items) -> str:
    h = hashlib.sha1()
    for key, node in items:
        h.update(repr(key).encode())
        h.update(node.topk.tobytes())
        h.update(b"|")
        h.update(node.sampled.tobytes())
        h.update(node.tail_probs.tobytes())
    return h.hexdigest()


class IndexSelection:
    """Chain selection: one :class:`NodeDraw` per time step."""

    def __init__(self, nodes, n_states: int, k1: int, k2: int):
        self.nodes = tuple(nodes)
        self.n_states = int(n_states)
        self.k1 = int(k1)
        self.k2 = int(k2)
        for node in self.nodes:
            states = node.active()[0]
            if states.min() < 0 or states.max() >= self.n_states:
                raise ConfigError("selected index outside [0, N)")
        self.fingerprint = _hash_nodes(enumerate(self.nodes))

    @classmethod
    def full(cls, length: int, n_states: int) -> "IndexSelection":
        node = _full_node(n_states)
        return cls([node] * length, n_states, n_states, 0)

    def __len__(self) -> int:
        return len(self.nodes)

    def active(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        return self.nodes[t].active()

    @property
    def topk(self):
        return [n.topk for n in self.nodes]

    @property
    def sampled(self):
        return [list(zip(n.sampled.tolist(), n.tail_probs.tolist())) for n in self.nodes]

    @property
    def is_full(self) -> bool:
        return all(n.topk.size == self.n_states for n in self.nodes)

    def check_against(self, length: int, n_states: int) -> None:
        if len(self) != length or self.n_states != n_states:
            raise ConfigError(
                f"selection shape (T={len(self)}, N={self.n_states}) does not match "
                f"potentials (T={length}, N={n_states})"
            )


class SpanSelection:
    """Hypertree selection: one :class:`NodeDraw` per span ``(i, j)``, ``i <= j``."""

    def __init__(self, nodes: dict, length: int, n_states: int, k1: int, k2: int):
        self.nodes = dict(nodes)
        self.length = int(length)
        self.n_states = int(n_states)
        self.k1 = int(k1)
        self.k2 = int(k2)
        expected = {(i, j) for i in range(length) for j in range(i, length)}
        if set(self.nodes) != expected:
            raise ConfigError("span selection must cover every span (i, j) with i <= j")
        for node in self.nodes.values():
            states = node.active()[0]
            if states.min() < 0 or states.max() >= self.n_states:
                raise ConfigError("selected index outside [0, N)")
        self.fingerprint = _hash_nodes(sorted(self.nodes.items()))

    @classmethod
    def full(cls, length: int, n_states: int) -> "SpanSelection":
        node = _full_node(n_states)
        spans = {(i, j): node for i in range(length) for j in range(i, length)}
        return cls(spans, length, n_states, n_states, 0)

    def active(self, span) -> tuple[np.ndarray, np.ndarray]:
        return self.nodes[span].active()

    def check_against(self, length: int, n_states: int) -> None:
        if self.length != length or self.n_states != n_states:
            raise ConfigError(
                f"selection shape (T={self.length}, N={self.n_states}) does not match "
                f"potentials (T={length}, N={n_states})"
            )


def select_chain(proposal, k1: int, k2: int, rng: Rng) -> IndexSelection:
    """Draw an :class:`IndexSelection` from a (T, N) proposal; node ``t`` uses ``rng.child(t)``."""
    q = check_proposal(proposal)
    check_counts(q.shape[1], k1, k2)
    nodes = [draw_node(q[t], k1, k2, rng.child(t)) for t in range(q.shape[0])]
    return IndexSelection(nodes, q.shape[1], k1, k2)


def select_spans(proposal, k1: int, k2: int, rng: Rng) -> SpanSelection:
    """Draw a :class:`SpanSelection` from a (T, T, N) per-span proposal."""
    q = np.asarray(proposal, dtype=np.float64)
    if q.ndim != 3 or q.shape[0] != q.shape[1]:
        raise ConfigError(f"span proposal must have shape (T, T, N), got {q.shape}")
    length, n = q.shape[0], q.shape[2]
    check_counts(n, k1, k2)
    spans = [(i, j) for i in range(length) for j in range(i, length)]
    check_proposal(np.stack([q[s] for s in spans]))
    nodes = {(i, j): draw_node(q[i, j], k1, k2, rng.child(i, j)) for i, j in spans}
    return SpanSelection(nodes, length, n, k1, k2)
