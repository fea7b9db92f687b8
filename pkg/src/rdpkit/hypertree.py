"""Exact and randomized Inside algorithm for span-labeled binary trees.

``spans[i, j, k]`` is the log potential of labeling span ``(i, j)``
(0-based, inclusive, ``i <= j``) with state ``k``. A tree over T leaves has
2T - 1 labeled spans and its weight is the product of their potentials.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var, value_of
from .exceptions import ConfigError, GuardLimitError, NumericalError
from .selection import SpanSelection
from .validation import check_span_array

__all__ = [
    "HypertreePotentials",
    "InsideTable",
    "TreeEnumeration",
    "exact_inside",
    "randomized_inside",
    "brute_force_trees",
    "catalan",
    "INSIDE_BLOCKS",
]

BRUTE_FORCE_LIMIT = 10**6
INSIDE_BLOCKS = ("full_cross", "paper_verbatim")


@dataclass(frozen=True, eq=False)
class HypertreePotentials:
    """Span-factored tree potentials; ``label_prior`` (N, non-negative) is optional proposal side information."""

    spans: object
    label_prior: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_shape", check_span_array(self.spans))

    @property
    def T(self) -> int:
        return self._shape[0]

    @property
    def N(self) -> int:
        return self._shape[1]

    @property
    def tape(self) -> Tape | None:
        return self.spans.tape if isinstance(self.spans, Var) else None

    def on_tape(self, tape: Tape) -> "HypertreePotentials":
        return HypertreePotentials(tape.leaf(value_of(self.spans)), self.label_prior, self.meta)

    def numpy(self) -> "HypertreePotentials":
        return HypertreePotentials(value_of(self.spans), self.label_prior, self.meta)


@dataclass(eq=False)
class InsideTable:
    states: dict
    log_weights: dict
    log_inside: dict
    fingerprint: str


@dataclass(frozen=True, eq=False)
class TreeEnumeration:
    log_z: float
    trees: list
    tree_posterior: np.ndarray
    log_weights: np.ndarray


def catalan(n: int) -> int:
    return comb(2 * n, n) // (n + 1)


def _verbatim_mask(left: SpanSelection, right: SpanSelection, lspan, rspan) -> np.ndarray:
    nl_top = left.nodes[lspan].topk.size
    nr_top = right.nodes[rspan].topk.size
    ltop = np.arange(left.active(lspan)[0].size) < nl_top
    rtop = np.arange(right.active(rspan)[0].size) < nr_top
    allowed = np.outer(ltop, rtop) | np.outer(~ltop, ~rtop)
    return np.where(allowed, 0.0, -np.inf)


def randomized_inside(potentials: HypertreePotentials, selection: SpanSelection, blocks: str = "full_cross"):
    """Inside recursion restricted to the selected labels of every span.

    ``blocks="full_cross"`` sums every (left label, right label) pair of the
    two restricted child sets; ``"paper_verbatim"`` keeps only top x top and
    sampled x sampled pairs. Returns ``(log_z, table)``.
    """
    if blocks not in INSIDE_BLOCKS:
        raise ConfigError(f"blocks must be one of {INSIDE_BLOCKS}, got {blocks!r}")
    T = potentials.T
    selection.check_against(T, potentials.N)
    spans = potentials.spans
    states, log_w, inside, weighted = {}, {}, {}, {}

    def finish(span, value):
        A, lw = selection.active(span)
        states[span], log_w[span], inside[span] = A, lw, value
        weighted[span] = ad.add(value, lw)

    for i in range(T):
        A, _ = selection.active((i, i))
        finish((i, i), ad.take(spans, (i, i, A)))
    for length in range(1, T):
        for i in range(T - length):
            j = i + length
            terms = []
            for m in range(i, j):
                left, right = weighted[(i, m)], weighted[(m + 1, j)]
                blk = ad.add(ad.reshape(left, (-1, 1)), ad.reshape(right, (1, -1)))
                if blocks == "paper_verbatim":
                    blk = ad.add(blk, _verbatim_mask(selection, selection, (i, m), (m + 1, j)))
                terms.append(ad.logsumexp(blk))
            split_sum = ad.logsumexp(ad.stack(terms))
            A, _ = selection.active((i, j))
            finish((i, j), ad.add(ad.take(spans, (i, j, A)), split_sum))
    log_z = ad.logsumexp(weighted[(0, T - 1)])
    log_z = log_z if isinstance(log_z, Var) else float(log_z)
    return log_z, InsideTable(states, log_w, inside, selection.fingerprint)


def exact_inside(potentials: HypertreePotentials):
    """Classical Inside algorithm: the randomized recursion on the full label index."""
    log_z, table = randomized_inside(potentials, SpanSelection.full(potentials.T, potentials.N))
    if not np.isfinite(float(value_of(log_z))):
        raise NumericalError("unreachable root: no tree has finite weight")
    return log_z, table


@lru_cache(maxsize=None)
def _bracketings(i: int, j: int) -> tuple:
    if i == j:
        return (((i, i),),)
    out = []
    for m in range(i, j):
        for left in _bracketings(i, m):
            for right in _bracketings(m + 1, j):
                out.append(((i, j),) + left + right)
    return tuple(out)


def brute_force_trees(potentials: HypertreePotentials) -> TreeEnumeration:
    """Enumerate all bracketings and all labelings of their spans."""
    T, N = potentials.T, potentials.N
    n_labels = N ** (2 * T - 1)
    if catalan(T - 1) * n_labels > BRUTE_FORCE_LIMIT:
        raise GuardLimitError(
            f"Catalan({T - 1}) * N**(2T-1) = {catalan(T - 1) * n_labels} exceeds {BRUTE_FORCE_LIMIT}"
        )
    sv = value_of(potentials.spans)
    trees = list(_bracketings(0, T - 1))
    labels = np.indices((N,) * (2 * T - 1)).reshape(2 * T - 1, -1).T
    logw = np.empty((len(trees), labels.shape[0]))
    for r, tree in enumerate(trees):
        acc = np.zeros(labels.shape[0])
        for s, (i, j) in enumerate(tree):
            acc += sv[i, j, labels[:, s]]
        logw[r] = acc
    log_z = float(value_of(ad.logsumexp(logw)))
    if not np.isfinite(log_z):
        raise NumericalError("no tree has finite weight")
    tree_post = np.exp(value_of(ad.logsumexp(logw, axis=1)) - log_z)
    return TreeEnumeration(log_z, trees, tree_post, logw)
