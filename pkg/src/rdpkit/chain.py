"""Exact and randomized inference on chain-structured models.

Potentials are kept in log space. ``pairwise[t, j, i]`` is the log weight of
moving from state ``j`` at step ``t`` to state ``i`` at step ``t + 1``
(emission terms folded in), ``init[i]`` the log weight of starting in ``i``.

Every routine runs on whatever the potentials hold: plain arrays give a fast
numpy evaluation, :class:`~rdpkit.autodiff.Var` fields record the computation
on their tape so the result can be differentiated. Selections are constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var, value_of
from .exceptions import GuardLimitError, NumericalError, SelectionMismatchError
from .numerics import LOG_TINY
from .selection import IndexSelection
from .validation import check_chain_arrays, check_temperature

__all__ = [
    "ChainPotentials",
    "AlphaTable",
    "GumbelSample",
    "ChainEnumeration",
    "exact_forward",
    "randomized_forward",
    "exact_entropy",
    "randomized_entropy",
    "gumbel_backward_sample",
    "brute_force_chain",
    "backward_messages",
]

BRUTE_FORCE_LIMIT = 10**6
_NEG_FLOOR = -np.finfo(np.float64).max


@dataclass(frozen=True, eq=False)
class ChainPotentials:
    """Unnormalized chain distribution in log space.

    ``emissions`` (T, N, log space) and ``state_prior`` (N, non-negative) are
    optional side information used to build local/global proposals.
    """

    init: object
    pairwise: object
    emissions: np.ndarray | None = None
    state_prior: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        length, n = check_chain_arrays(self.init, self.pairwise)
        object.__setattr__(self, "_shape", (length, n))

    @property
    def T(self) -> int:
        return self._shape[0]

    @property
    def N(self) -> int:
        return self._shape[1]

    @property
    def tape(self) -> Tape | None:
        for x in (self.init, self.pairwise):
            if isinstance(x, Var):
                return x.tape
        return None

    def on_tape(self, tape: Tape) -> "ChainPotentials":
        """Copy whose ``init``/``pairwise`` are leaves of ``tape``."""
        return ChainPotentials(
            tape.leaf(value_of(self.init)),
            tape.leaf(value_of(self.pairwise)),
            self.emissions,
            self.state_prior,
            self.meta,
        )

    def numpy(self) -> "ChainPotentials":
        return ChainPotentials(
            value_of(self.init), value_of(self.pairwise), self.emissions, self.state_prior, self.meta
        )


@dataclass(eq=False)
class AlphaTable:
    """Restricted forward table: ``log_alpha[t]`` is defined on ``states[t]``."""

    states: list
    log_weights: list
    log_alpha: list
    fingerprint: str

    def __len__(self):
        return len(self.states)

    def as_dict(self, t: int) -> dict:
        vals = value_of(self.log_alpha[t])
        return {int(s): float(v) for s, v in zip(self.states[t], vals)}


class GumbelSample(NamedTuple):
    soft: list
    hard: np.ndarray
    support: list


@dataclass(frozen=True, eq=False)
class ChainEnumeration:
    log_z: float
    entropy: float
    paths: np.ndarray
    posterior: np.ndarray


def _scalar(x):
    return x if isinstance(x, Var) else float(x)


def _column(x):
    return ad.reshape(x, (-1, 1))


def _row(x):
    return ad.reshape(x, (1, -1))


def _block(pairwise, t, rows, cols):
    return ad.take(pairwise, (t, rows[:, None], cols[None, :]))


def randomized_forward(potentials: ChainPotentials, selection: IndexSelection):
    """Forward recursion restricted to the selected states.

    Tail states enter with weight ``1 / (K2 * q~)`` where ``q~`` is the
    proposal renormalized outside the top-K1 set, so the linear-space
    estimate of Z is unbiased. Returns ``(log_z, alphas)``.
    """
    selection.check_against(potentials.T, potentials.N)
    states, log_w, log_alpha = [], [], []
    A, lw = selection.active(0)
    la = ad.take(potentials.init, A)
    states.append(A)
    log_w.append(lw)
    log_alpha.append(la)
    for t in range(potentials.T - 1):
        B, lw_next = selection.active(t + 1)
        block = _block(potentials.pairwise, t, A, B)
        la = ad.logsumexp(ad.add(block, _column(ad.add(la, lw))), axis=0)
        A, lw = B, lw_next
        states.append(A)
        log_w.append(lw)
        log_alpha.append(la)
    log_z = ad.logsumexp(ad.add(la, lw))
    return _scalar(log_z), AlphaTable(states, log_w, log_alpha, selection.fingerprint)


def exact_forward(potentials: ChainPotentials):
    """Classical forward algorithm: the randomized recursion on the full index."""
    log_z, alphas = randomized_forward(potentials, IndexSelection.full(potentials.T, potentials.N))
    for t, la in enumerate(alphas.log_alpha):
        if np.all(np.isneginf(value_of(la))):
            raise NumericalError(f"unreachable step {t}")
    return log_z, alphas


def _check_reuse(selection: IndexSelection, alphas: AlphaTable) -> None:
    if alphas.fingerprint != selection.fingerprint:
        raise SelectionMismatchError(
            "alphas were produced with a different selection; second-order passes must reuse it"
        )


def randomized_entropy(potentials: ChainPotentials, selection: IndexSelection, alphas: AlphaTable, log_z):
    """Entropy recursion over the backward conditionals of the restricted forward graph.

    ``p(i, j) = phi(i, j) alpha(i) / alpha_next(j)`` and
    ``H_next(j) = sum_i w(i) p(i, j) [H(i) - log p(i, j)]``. The argument of
    the log is clamped into ``[1e-300, 1]``: zero-probability terms then
    contribute zero, and noisy estimates above one do not flip the sign.
    """
    _check_reuse(selection, alphas)
    selection.check_against(potentials.T, potentials.N)
    H = np.zeros(alphas.states[0].size)
    for t in range(potentials.T - 1):
        A, B = alphas.states[t], alphas.states[t + 1]
        w = np.exp(alphas.log_weights[t])
        block = _block(potentials.pairwise, t, A, B)
        denom = ad.clip_min(alphas.log_alpha[t + 1], _NEG_FLOOR)
        logp = ad.sub(ad.add(block, _column(alphas.log_alpha[t])), _row(denom))
        inner = ad.sub(_column(H), ad.clip(logp, LOG_TINY, 0.0))
        H = ad.sum(ad.mul(ad.mul(ad.exp(logp), inner), w[:, None]), axis=0)
    w = np.exp(alphas.log_weights[-1])
    logp = ad.sub(alphas.log_alpha[-1], log_z)
    terms = ad.mul(ad.exp(logp), ad.sub(H, ad.clip(logp, LOG_TINY, 0.0)))
    return _scalar(ad.sum(ad.mul(terms, w)))


def exact_entropy(potentials: ChainPotentials):
    """Shannon entropy (nats) of the normalized chain distribution."""
    log_z, alphas = exact_forward(potentials)
    return randomized_entropy(potentials, IndexSelection.full(potentials.T, potentials.N), alphas, log_z)


def gumbel_backward_sample(
    potentials: ChainPotentials,
    selection: IndexSelection,
    alphas: AlphaTable,
    log_z,
    noise,
    temperature: float = 1.0,
) -> GumbelSample:
    """Perturb-and-argmax backward sampling on the restricted forward graph.

    ``noise`` has shape (T, N) and is indexed by original state. At each step
    the logits over the active set are the restricted backward conditionals
    (importance weights included) plus noise; ``hard[t]`` is their argmax in
    the original state space and ``soft[t]`` their tempered softmax.
    """
    _check_reuse(selection, alphas)
    selection.check_against(potentials.T, potentials.N)
    tau = check_temperature(temperature)
    g = np.asarray(noise, dtype=np.float64)
    if g.shape != (potentials.T, potentials.N):
        raise SelectionMismatchError(f"noise must have shape {(potentials.T, potentials.N)}, got {g.shape}")
    T = potentials.T
    soft = [None] * T
    hard = np.empty(T, dtype=np.intp)
    support = list(alphas.states)

    A = alphas.states[T - 1]
    logits = ad.add(ad.sub(alphas.log_alpha[T - 1], log_z), alphas.log_weights[T - 1] + g[T - 1, A])
    soft[T - 1] = ad.softmax(ad.mul(logits, 1.0 / tau))
    hard[T - 1] = A[int(np.argmax(value_of(logits)))]
    for t in range(T - 2, -1, -1):
        A, B = alphas.states[t], alphas.states[t + 1]
        col = int(np.flatnonzero(B == hard[t + 1])[0])
        column = ad.take(potentials.pairwise, (t, A, hard[t + 1]))
        logits = ad.sub(ad.add(column, alphas.log_alpha[t]), ad.take(alphas.log_alpha[t + 1], col))
        logits = ad.add(logits, alphas.log_weights[t] + g[t, A])
        soft[t] = ad.softmax(ad.mul(logits, 1.0 / tau))
        hard[t] = A[int(np.argmax(value_of(logits)))]
    return GumbelSample(soft, hard, support)


def backward_messages(potentials: ChainPotentials) -> list[np.ndarray]:
    """Exact log backward messages ``beta[t]`` (numpy only)."""
    pw = value_of(potentials.pairwise)
    beta = [np.zeros(potentials.N)]
    for t in range(potentials.T - 2, -1, -1):
        beta.append(_np_logsumexp(pw[t] + beta[-1][None, :], axis=1))
    return beta[::-1]


def _np_logsumexp(a, axis):
    return value_of(ad.logsumexp(a, axis=axis))


def brute_force_chain(potentials: ChainPotentials) -> ChainEnumeration:
    """Enumerate all N**T paths."""
    T, N = potentials.T, potentials.N
    if N**T > BRUTE_FORCE_LIMIT:
        raise GuardLimitError(f"N**T = {N**T} paths exceeds the enumeration limit {BRUTE_FORCE_LIMIT}")
    init, pw = value_of(potentials.init), value_of(potentials.pairwise)
    paths = np.indices((N,) * T).reshape(T, -1).T
    logw = init[paths[:, 0]].copy()
    for t in range(T - 1):
        logw += pw[t, paths[:, t], paths[:, t + 1]]
    log_z = float(value_of(ad.logsumexp(logw)))
    if not np.isfinite(log_z):
        raise NumericalError("no path has finite weight")
    post = np.exp(logw - log_z)
    nz = post > 0
    entropy = float(-np.sum(post[nz] * (logw[nz] - log_z)))
    return ChainEnumeration(log_z, entropy, paths, post)
