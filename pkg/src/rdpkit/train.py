"""Desk-scale training through randomized estimators.

Two demos share one embedding-factored chain: every latent state ``i`` has an
embedding ``e_i`` and every observed symbol ``v`` a fixed context vector
``r_v``. Log-potentials are ``e_j.e_i`` for a transition ``j -> i`` and
``e_i.r_{y_t}`` for emitting ``y_t`` from ``i``.

* :func:`fit_marginal_likelihood` fits the embeddings by gradient ascent on
  ``log p(y) = log Z(y) - log Z_all`` where ``Z_all`` also sums over symbols.
  Both partition functions are computed by the configured estimator; the
  reported NLL is always exact.
* :func:`fit_toy_autoencoder` trains the chain as an inference network for a
  categorical decoder using relaxed backward samples and the entropy estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, value_of
from .chain import (
    ChainPotentials,
    exact_forward,
    gumbel_backward_sample,
    randomized_entropy,
    randomized_forward,
)
from .exceptions import ConfigError, NumericalError
from .numerics import Rng, gumbel_noise
from .proposals import chain_proposal
from .selection import IndexSelection, select_chain

__all__ = [
    "EmbeddingParams",
    "TrainConfig",
    "LikelihoodFit",
    "AutoencoderFit",
    "build_potentials",
    "build_symbol_marginal_potentials",
    "sample_sequences",
    "make_long_tail_data",
    "exact_nll",
    "tail_frequency_mass",
    "fit_marginal_likelihood",
    "fit_toy_autoencoder",
    "ESTIMATORS",
]

ESTIMATORS = ("exact", "rdp", "topk")
EXACT_MAX_N = 200


@dataclass(frozen=True, eq=False)
class EmbeddingParams:
    """``state_embeddings`` (N, d) and the fixed symbol contexts ``context_features`` (V, d)."""

    state_embeddings: object
    context_features: np.ndarray

    def __post_init__(self):
        emb = value_of(self.state_embeddings)
        ctx = np.asarray(self.context_features, dtype=np.float64)
        if emb.ndim != 2 or ctx.ndim != 2:
            raise ConfigError("embeddings and context features must be 2-D")
        if emb.shape[1] < 1 or emb.shape[1] != ctx.shape[1]:
            raise ConfigError(
                f"dimension mismatch: state embeddings have d={emb.shape[1]}, contexts d={ctx.shape[1]}"
            )
        if not (np.isfinite(emb).all() and np.isfinite(ctx).all()):
            raise ConfigError("embeddings must be finite")
        object.__setattr__(self, "context_features", ctx)

    @property
    def n_states(self) -> int:
        return value_of(self.state_embeddings).shape[0]

    @property
    def n_symbols(self) -> int:
        return self.context_features.shape[0]

    @property
    def dim(self) -> int:
        return self.context_features.shape[1]

    def numpy(self) -> "EmbeddingParams":
        return EmbeddingParams(value_of(self.state_embeddings).copy(), self.context_features)


def _check_observations(obs, n_symbols: int) -> np.ndarray:
    y = np.asarray(obs)
    if y.ndim != 1 or y.size < 1 or not np.issubdtype(y.dtype, np.integer):
        raise ConfigError("observations must be a non-empty 1-D integer sequence")
    if y.min() < 0 or y.max() >= n_symbols:
        raise ConfigError(f"observation outside [0, {n_symbols})")
    return y.astype(np.intp)


def _assemble(emb, emit, meta: dict) -> ChainPotentials:
    """Chain from state embeddings and per-step emission log-potentials ``emit`` (T, N)."""
    length, n = value_of(emit).shape
    trans = ad.matmul(emb, ad.transpose(emb))
    if length > 1:
        nxt = ad.take(emit, np.arange(1, length))
        pair = ad.add(ad.reshape(trans, (1, n, n)), ad.reshape(nxt, (length - 1, 1, n)))
    else:
        pair = np.zeros((0, n, n))
    norms = np.abs(value_of(emb)).sum(axis=1)
    prior = norms if norms.sum() > 0 else None
    return ChainPotentials(ad.take(emit, 0), pair, emissions=value_of(emit).copy(), state_prior=prior, meta=meta)


def build_potentials(params: EmbeddingParams, observations) -> ChainPotentials:
    """Chain potentials for one observed sequence.

    ``pairwise[t][j][i] = e_j.e_i + e_i.r_{y_{t+1}}`` and ``init[i] = e_i.r_{y_0}``;
    when ``state_embeddings`` is a :class:`Var` everything is recorded on its tape.
    """
    y = _check_observations(observations, params.n_symbols)
    emb = params.state_embeddings
    emit = ad.transpose(ad.matmul(emb, params.context_features[y].T))
    return _assemble(emb, emit, {"kind": "conditional"})


def build_symbol_marginal_potentials(params: EmbeddingParams, length: int) -> ChainPotentials:
    """Chain whose partition function sums over all state and symbol sequences of ``length``."""
    if length < 1:
        raise ConfigError("length must be >= 1")
    emb = params.state_embeddings
    emit = ad.logsumexp(ad.matmul(emb, params.context_features.T), axis=1)
    steps = ad.add(ad.reshape(emit, (1, -1)), np.zeros((length, 1)))
    return _assemble(emb, steps, {"kind": "symbol-marginal"})


def _exact_log_z(params: EmbeddingParams, observations=None, length=None) -> float:
    p = params.numpy()
    pot = build_potentials(p, observations) if observations is not None else build_symbol_marginal_potentials(p, length)
    return float(exact_forward(pot)[0])


def exact_nll(params: EmbeddingParams, data) -> float:
    """Mean exact negative log-likelihood per sequence."""
    data = _check_data(data, params.n_symbols)
    if params.n_states > EXACT_MAX_N:
        raise ConfigError(f"exact evaluation is limited to N <= {EXACT_MAX_N}")
    log_all = _exact_log_z(params, length=data.shape[1])
    return float(np.mean([log_all - _exact_log_z(params, y) for y in data]))


def _check_data(data, n_symbols: int) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ConfigError("data must be a non-empty (sequences, length) integer array")
    for row in arr:
        _check_observations(row, n_symbols)
    return arr.astype(np.intp)


def sample_sequences(params: EmbeddingParams, n: int, length: int, seed: int = 0):
    """Exact ancestral samples ``(states, symbols)`` from the normalized joint model."""
    p = params.numpy()
    emb, ctx = value_of(p.state_embeddings), p.context_features
    gen = Rng(seed).generator
    trans = emb @ emb.T
    sym_logits = emb @ ctx.T
    emit = value_of(ad.logsumexp(sym_logits, axis=1))
    # backward messages of the symbol-marginal chain
    beta = [np.zeros(p.n_states)]
    for _ in range(length - 1):
        beta.append(value_of(ad.logsumexp(trans + emit[None, :] + beta[-1][None, :], axis=1)))
    beta = beta[::-1]
    states = np.empty((n, length), dtype=np.intp)
    symbols = np.empty((n, length), dtype=np.intp)

    def draw(logits):
        w = np.exp(logits - logits.max(axis=-1, keepdims=True))
        w /= w.sum(axis=-1, keepdims=True)
        u = gen.random((w.shape[0], 1))
        return np.minimum((w.cumsum(axis=-1) < u).sum(axis=-1), w.shape[-1] - 1)

    states[:, 0] = draw(np.broadcast_to(emit + beta[0], (n, p.n_states)))
    for t in range(1, length):
        states[:, t] = draw(trans[states[:, t - 1]] + emit[None, :] + beta[t][None, :])
    for t in range(length):
        symbols[:, t] = draw(sym_logits[states[:, t]])
    return states, symbols


def make_long_tail_data(
    n_states: int = 60,
    n_symbols: int = 30,
    dim: int = 8,
    length: int = 8,
    n_sequences: int = 40,
    seed: int = 0,
    norm_cap: float = 2.0,
):
    """Synthetic data from a teacher whose state usage is long-tailed.

    Teacher embeddings have unit directions and heavy-tailed (Pareto) norms:
    a few states dominate but the many others keep non-negligible mass.
    Larger ``norm_cap`` values let the biggest states take over the posterior.
    Returns ``(symbols, teacher_params)``; contexts are random unit vectors.
    """
    if not norm_cap > 0:
        raise ConfigError("norm_cap must be positive")
    gen = Rng(seed, (1,)).generator
    ctx = gen.standard_normal((n_symbols, dim))
    ctx /= np.linalg.norm(ctx, axis=1, keepdims=True)
    dirs = gen.standard_normal((n_states, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    norms = 0.6 * (1.0 - gen.random(n_states)) ** -0.5
    teacher = EmbeddingParams(dirs * np.minimum(norms, norm_cap)[:, None], ctx)
    _, symbols = sample_sequences(teacher, n_sequences, length, seed=seed)
    return symbols, teacher


@dataclass
class TrainConfig:
    estimator: str = "rdp"
    k1: int = 0
    k2: int = 1
    steps: int = 100
    learning_rate: float = 0.05
    seed: int = 0
    proposal: str = "local-global"
    dim: int = 8
    init_scale: float = 0.1
    # autoencoder only
    temperature: float = 1.0
    straight_through: bool = False
    entropy_weight: float = 1.0
    tail_fraction: float = 0.1

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.k1 < 0 or self.k2 < 0:
            raise ConfigError("K1 and K2 must be non-negative")
        if self.estimator == "topk":
            self.k2 = 0

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        if d is None:
            return cls()
        if isinstance(d, TrainConfig):
            return d
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training options {sorted(unknown)}")
        return cls(**d)


def _selection(pot: ChainPotentials, cfg: TrainConfig, rng: Rng) -> IndexSelection:
    if cfg.estimator == "exact":
        return IndexSelection.full(pot.T, pot.N)
    if cfg.k1 + cfg.k2 > pot.N:
        raise ConfigError(f"K1 + K2 = {cfg.k1 + cfg.k2} exceeds N = {pot.N}")
    if cfg.k1 + cfg.k2 == 0:
        raise ConfigError("K1 + K2 must be positive")
    q = chain_proposal(pot.numpy(), cfg.proposal)
    return select_chain(q, cfg.k1, cfg.k2, rng)


def _estimate_log_z(pot: ChainPotentials, cfg: TrainConfig, rng: Rng):
    return randomized_forward(pot, _selection(pot, cfg, rng))[0]


@dataclass
class LikelihoodFit:
    nll: np.ndarray
    params: EmbeddingParams
    config: TrainConfig
    tape_nodes: int = 0
    extra: dict = field(default_factory=dict)


def _init_params(n_states: int, contexts: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    gen = Rng(cfg.seed, (2,)).generator
    return cfg.init_scale * gen.standard_normal((n_states, contexts.shape[1]))


def fit_marginal_likelihood(data, n_states: int, context_features, config=None, init=None) -> LikelihoodFit:
    """Plain gradient ascent on the mean log marginal likelihood of ``data``.

    The training gradient comes from the configured estimator (exact, rdp or
    topk); ``nll[s]`` is the exact mean NLL of the parameters before step
    ``s`` and ``nll[-1]`` that of the final parameters.
    """
    cfg = TrainConfig.from_dict(config)
    ctx = np.asarray(context_features, dtype=np.float64)
    data = _check_data(data, ctx.shape[0])
    emb = _init_params(n_states, ctx, cfg) if init is None else np.array(init, dtype=np.float64)
    EmbeddingParams(emb, ctx)
    length = data.shape[1]
    root = Rng(cfg.seed, (3,))
    curve = []
    max_nodes = 0
    for step in range(cfg.steps + 1):
        nll = exact_nll(EmbeddingParams(emb, ctx), data)
        if not np.isfinite(nll):
            raise NumericalError(f"training diverged at step {step}: NLL={nll}; lower the learning rate")
        curve.append(nll)
        if step == cfg.steps:
            break
        tape = Tape()
        params = EmbeddingParams(tape.leaf(emb), ctx)
        rng = root.child(step)
        log_all = _estimate_log_z(build_symbol_marginal_potentials(params, length), cfg, rng.child(0))
        total = 0.0
        for n, y in enumerate(data):
            total = ad.add(total, _estimate_log_z(build_potentials(params, y), cfg, rng.child(n + 1)))
        objective = ad.sub(ad.mul(total, 1.0 / len(data)), log_all)
        tape.backward(objective)
        max_nodes = max(max_nodes, tape.n_scalars)
        grad = params.state_embeddings.grad
        if not np.isfinite(grad).all():
            raise NumericalError(f"non-finite gradient at step {step}; lower the learning rate")
        emb = emb + cfg.learning_rate * grad
    return LikelihoodFit(np.asarray(curve), EmbeddingParams(emb, ctx), cfg, max_nodes)


@dataclass
class AutoencoderFit:
    elbo: np.ndarray
    histogram: np.ndarray
    never_used: int
    tail_mass: float
    encoder: EmbeddingParams
    decoder: np.ndarray
    config: TrainConfig


def _decoder_log_lik(soft, states, decoder, y_t: int, straight_through: bool, hard_pos: int):
    x = ad.reshape(soft, (1, -1))
    if straight_through:
        onehot = np.zeros((1, states.size))
        onehot[0, hard_pos] = 1.0
        x = ad.add(x, onehot - value_of(x))
    logits = ad.matmul(x, ad.take(decoder, states))
    return ad.take(ad.log_softmax(logits, axis=-1), (0, y_t))


def _aggregated_posterior(emb, ctx, data, cfg: TrainConfig, rng: Rng) -> np.ndarray:
    params = EmbeddingParams(emb, ctx)
    counts = np.zeros(emb.shape[0])
    for n, y in enumerate(data):
        pot = build_potentials(params, y)
        sel = _selection(pot, cfg, rng.child(n, 0))
        log_z, alphas = randomized_forward(pot, sel)
        noise = gumbel_noise(rng.child(n, 1), (pot.T, pot.N))
        sample = gumbel_backward_sample(pot, sel, alphas, log_z, noise, cfg.temperature)
        np.add.at(counts, sample.hard, 1.0)
    return counts


def tail_frequency_mass(histogram, fraction: float = 0.1) -> float:
    """Share of the histogram outside its ``ceil(fraction * N)`` most frequent states."""
    h = np.asarray(histogram, dtype=np.float64)
    if h.sum() <= 0:
        raise ConfigError("empty histogram")
    head = int(np.ceil(fraction * h.size))
    return float(1.0 - np.sort(h)[::-1][:head].sum() / h.sum())


def fit_toy_autoencoder(data, n_states: int, context_features, config=None, init=None) -> AutoencoderFit:
    """Train a chain inference network and a categorical decoder on the ELBO.

    Per sequence the ELBO estimate is ``sum_t log p(y_t | x~_t) + H^ - T log N``
    with ``x~`` a relaxed randomized backward sample over the active set and
    ``H^`` the randomized entropy of the same selection (uniform prior over
    latent chains). The decoder is a state-by-symbol logit table; a relaxed
    sample mixes the rows of its active states. With ``straight_through``
    the forward pass uses the hard sample and gradients flow through the
    relaxed one. After training, one hard sample per sequence gives the
    aggregated posterior histogram.
    """
    cfg = TrainConfig.from_dict(config)
    ctx = np.asarray(context_features, dtype=np.float64)
    data = _check_data(data, ctx.shape[0])
    emb = _init_params(n_states, ctx, cfg) if init is None else np.array(init, dtype=np.float64)
    decoder = np.zeros((n_states, ctx.shape[0]))
    length = data.shape[1]
    root = Rng(cfg.seed, (4,))
    prior = -length * np.log(n_states)
    curve = []
    for step in range(cfg.steps):
        tape = Tape()
        params = EmbeddingParams(tape.leaf(emb), ctx)
        dec = tape.leaf(decoder)
        rng = root.child(step)
        total = 0.0
        for n, y in enumerate(data):
            pot = build_potentials(params, y)
            sel = _selection(pot, cfg, rng.child(n, 0))
            log_z, alphas = randomized_forward(pot, sel)
            ent = randomized_entropy(pot, sel, alphas, log_z)
            noise = gumbel_noise(rng.child(n, 1), (pot.T, pot.N))
            sample = gumbel_backward_sample(pot, sel, alphas, log_z, noise, cfg.temperature)
            recon = 0.0
            for t in range(length):
                pos = int(np.flatnonzero(sample.support[t] == sample.hard[t])[0])
                ll = _decoder_log_lik(sample.soft[t], sample.support[t], dec, int(y[t]), cfg.straight_through, pos)
                recon = ad.add(recon, ll)
            total = ad.add(total, ad.add(recon, ad.mul(ent, cfg.entropy_weight)))
        elbo = ad.add(ad.mul(total, 1.0 / len(data)), prior)
        value = float(value_of(elbo))
        if not np.isfinite(value):
            raise NumericalError(f"ELBO is not finite at step {step}; lower the learning rate")
        curve.append(value)
        tape.backward(elbo)
        emb = emb + cfg.learning_rate * params.state_embeddings.grad
        decoder = decoder + cfg.learning_rate * dec.grad
    hist = _aggregated_posterior(emb, ctx, data, cfg, root.child(cfg.steps))
    return AutoencoderFit(
        elbo=np.asarray(curve),
        histogram=hist,
        never_used=int((hist == 0).sum()),
        tail_mass=tail_frequency_mass(hist, cfg.tail_fraction),
        encoder=EmbeddingParams(emb, ctx),
        decoder=decoder,
        config=cfg,
    )
