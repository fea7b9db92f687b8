"""Simulated instances, replicated estimator evaluation and the sum-and-sample estimator."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .chain import ChainPotentials, exact_entropy, exact_forward, randomized_entropy, randomized_forward
from .exceptions import ConfigError, GuardLimitError
from .hypertree import HypertreePotentials, exact_inside, randomized_inside
from .numerics import Rng, as_rng
from .proposals import chain_proposal, tree_proposal
from .selection import select_chain, select_spans

__all__ = [
    "TailProfile",
    "PROFILES",
    "EstimateReport",
    "tail_sum_estimate",
    "analytic_tail_variance",
    "calibrate_temperature",
    "make_profile",
    "normalized_entropy",
    "simulate_chain",
    "simulate_tree",
    "exact_quantity",
    "evaluate",
]

PROFILE_TARGETS = {"dense": 0.9, "intermediate": 0.6, "long_tail": 0.3}
TREE_EXACT_MAX_N = 300
CHAIN_EXACT_MAX_CELLS = 2 * 10**8

_EMBED_DIM = 8
_DIRECTION_SD = 1.5


@dataclass(frozen=True)
class TailProfile:
    name: str
    temperature: float
    target_entropy: float


def _profile_name(profile) -> str:
    name = profile.name if isinstance(profile, TailProfile) else str(profile).replace("-", "_")
    if name not in PROFILE_TARGETS:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILE_TARGETS)}")
    return name


PROFILES = tuple(PROFILE_TARGETS)


def normalized_entropy(logits, axis=-1) -> np.ndarray:
    """Entropy of ``softmax(logits)`` divided by ``log N``."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[axis]
    if n == 1:
        return np.zeros(np.delete(logits.shape, axis % logits.ndim))
    z = logits - logits.max(axis=axis, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    return -(np.exp(logp) * logp).sum(axis=axis) / np.log(n)


def calibrate_temperature(logits, target: float) -> float:
    """Temperature at which the rows of ``logits / temperature`` reach ``target`` mean normalized entropy.

    Bisection in log-temperature; the mean entropy is increasing in the temperature.
    """
    rows = np.asarray(logits, dtype=np.float64)
    rows = rows.reshape(-1, rows.shape[-1])
    if rows.shape[-1] == 1 or np.ptp(rows, axis=1).max() == 0:
        return 1.0
    lo, hi = np.log(1e-4), np.log(1e4)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if normalized_entropy(rows / np.exp(mid)).mean() < target:
            lo = mid
        else:
            hi = mid
    return float(np.exp(0.5 * (lo + hi)))


def _positive_directions(gen: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    u = np.exp(_DIRECTION_SD * gen.standard_normal((rows, dim)))
    return u / u.sum(axis=1, keepdims=True)


def _state_embeddings(gen: np.random.Generator, n: int, dim: int) -> np.ndarray:
    # heavy-tailed (Pareto) norms: a few dominant states over a broad flat bulk
    norms = 1.0 / (1.0 - gen.random(n))
    return norms[:, None] * _positive_directions(gen, n, dim)


def _chain_logits(gen: np.random.Generator, n: int, length: int):
    emb = _state_embeddings(gen, n, _EMBED_DIM)
    ctx = _positive_directions(gen, length, _EMBED_DIM)
    trans = np.log(emb @ emb.T)
    emit = np.log(ctx @ emb.T)
    trans -= trans.mean()
    emit -= emit.mean()
    pair = trans[None] + emit[1:, :][:, None, :]
    return emit[0], pair, emit, np.abs(emb).sum(axis=1)


def _tree_logits(gen: np.random.Generator, n: int, length: int):
    emb = _state_embeddings(gen, n, _EMBED_DIM)
    ctx = _positive_directions(gen, length * length, _EMBED_DIM)
    spans = np.log(ctx @ emb.T).reshape(length, length, n)
    spans -= spans.mean()
    return spans, np.abs(emb).sum(axis=1)


def make_profile(profile, logits) -> TailProfile:
    """Profile whose temperature is calibrated on the rows of ``logits``."""
    name = _profile_name(profile)
    target = PROFILE_TARGETS[name]
    return TailProfile(name, calibrate_temperature(logits, target), target)


def _meta(prof: TailProfile, seed) -> dict:
    return {"profile": prof.name, "temperature": prof.temperature, "target_entropy": prof.target_entropy, "seed": int(seed)}


def simulate_chain(n_states: int, length: int, profile="dense", seed: int = 0) -> ChainPotentials:
    """Random embedding-factored chain whose conditionals sit in the profile's entropy band.

    States carry positive embeddings ``e_i`` with heavy-tailed norms and steps
    carry positive contexts ``r_t``. Log-potentials are
    ``(log e_j.e_i + log e_i.r_{t+1}) / temperature``, with the temperature
    calibrated on this instance so the rows of the transition tensor have the
    profile's mean normalized entropy. Emission logits and the L1 norms of
    the embeddings are kept as local and global proposal side information.
    """
    if n_states < 1 or length < 1:
        raise ConfigError("simulate_chain needs N >= 1 and T >= 1")
    gen = as_rng(seed).generator
    init, pair, emit, norms = _chain_logits(gen, n_states, length)
    prof = make_profile(profile, pair if length > 1 else init[None])
    tau = prof.temperature
    return ChainPotentials(init / tau, pair / tau, emissions=emit / tau, state_prior=norms, meta=_meta(prof, seed))


def simulate_tree(n_states: int, length: int, profile="dense", seed: int = 0) -> HypertreePotentials:
    """Random span potentials ``log e_k.c_ij / temperature`` with per-span label entropy in the profile's band."""
    if n_states < 1 or length < 1:
        raise ConfigError("simulate_tree needs N >= 1 and T >= 1")
    gen = as_rng(seed).generator
    spans, norms = _tree_logits(gen, n_states, length)
    prof = make_profile(profile, spans[np.triu_indices(length)])
    spans = spans / prof.temperature
    spans[np.tril_indices(length, -1)] = -np.inf
    return HypertreePotentials(spans, label_prior=norms, meta=_meta(prof, seed))


def tail_sum_estimate(a, k1: int, k2: int, q, rng, size=None):
    """Sum-and-sample estimate of ``sum(a)``.

    The ``k1`` leading entries of the descending list ``a`` are summed
    exactly; ``k2`` i.i.d. draws from ``q`` (a distribution over the remaining
    entries) are importance weighted. ``size`` requests that many independent
    replicates as an array.
    """
    a = np.asarray(a, dtype=np.float64)
    if (a <= 0).any() or (np.diff(a) > 0).any():
        raise ConfigError("a must be positive and sorted in descending order")
    if not 0 <= k1 <= a.size:
        raise ConfigError(f"K1={k1} outside [0, {a.size}]")
    head = a[:k1].sum()
    tail = a[k1:]
    if k2 == 0:
        return head if size is None else np.full(size, head)
    if tail.size == 0:
        raise ConfigError("empty tail with K2 > 0")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != tail.shape or (q < 0).any() or not np.isclose(q.sum(), 1.0, atol=1e-12):
        raise ConfigError("q must be a distribution over the tail entries")
    gen = as_rng(rng).generator
    shape = (k2,) if size is None else (size, k2)
    idx = gen.choice(tail.size, size=shape, p=q)
    est = head + (tail[idx] / q[idx]).mean(axis=-1)
    return float(est) if size is None else est


def analytic_tail_variance(a, k1: int, q, k2: int = 1) -> float:
    """Variance of the sum-and-sample estimate: ``(sum a_i^2 / q_i - (sum a_i)^2) / k2`` over the tail."""
    a = np.asarray(a, dtype=np.float64)
    tail = a[k1:]
    q = np.asarray(q, dtype=np.float64)
    if tail.size == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        second = np.sum(np.where(tail > 0, tail**2 / q, 0.0))
    var = second - tail.sum() ** 2
    return float(max(var, 0.0) / k2) if np.isfinite(var) else float("inf")


@dataclass
class EstimateReport:
    exact: float
    replicates: np.ndarray
    bias: float
    variance: float
    mse: float
    config: dict = field(default_factory=dict)

    @classmethod
    def from_replicates(cls, exact: float, replicates, config: dict) -> "EstimateReport":
        x = np.asarray(replicates, dtype=np.float64)
        err = x - exact
        return cls(
            exact=float(exact),
            replicates=x,
            bias=float(err.mean()),
            variance=float(x.var()),
            mse=float(np.mean(err**2)),
            config=dict(config),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["replicates"] = self.replicates.tolist()
        return d


def _check_exact_size(potentials) -> None:
    if isinstance(potentials, HypertreePotentials):
        if potentials.N > TREE_EXACT_MAX_N:
            raise GuardLimitError(
                f"exact Inside reference capped at N <= {TREE_EXACT_MAX_N}; got N={potentials.N}, use a smaller N"
            )
    elif potentials.T * potentials.N**2 > CHAIN_EXACT_MAX_CELLS:
        raise GuardLimitError(
            f"exact Forward reference needs T*N^2 = {potentials.T * potentials.N ** 2} cells; use a smaller N or T"
        )


def exact_quantity(potentials, quantity: str = "logz") -> float:
    _check_exact_size(potentials)
    if isinstance(potentials, HypertreePotentials):
        if quantity != "logz":
            raise ConfigError("hypertrees support quantity 'logz' only")
        return float(exact_inside(potentials.numpy())[0])
    pot = potentials.numpy()
    if quantity == "logz":
        return float(exact_forward(pot)[0])
    if quantity == "entropy":
        return float(exact_entropy(pot))
    raise ConfigError(f"unknown quantity {quantity!r}")


def _replicate_block(potentials, quantity, k1, k2, proposal, seed, indices, blocks):
    out = np.empty(len(indices))
    root = Rng(seed)
    tree = isinstance(potentials, HypertreePotentials)
    for pos, r in enumerate(indices):
        rng = root.child(r)
        if tree:
            sel = select_spans(proposal, k1, k2, rng)
            out[pos] = float(randomized_inside(potentials, sel, blocks=blocks)[0])
            continue
        sel = select_chain(proposal, k1, k2, rng)
        log_z, alphas = randomized_forward(potentials, sel)
        if quantity == "logz":
            out[pos] = log_z
        else:
            out[pos] = randomized_entropy(potentials, sel, alphas, log_z)
    return out


def build_proposal(potentials, proposal="local-global", mix: float = 0.5) -> np.ndarray:
    if not isinstance(proposal, str):
        return np.asarray(proposal, dtype=np.float64)
    if isinstance(potentials, HypertreePotentials):
        return tree_proposal(potentials, proposal, mix=mix)
    return chain_proposal(potentials, proposal, mix=mix)


def evaluate(
    potentials,
    quantity: str = "logz",
    k1: int = 0,
    k2: int = 1,
    proposal="local-global",
    runs: int = 100,
    seed: int = 0,
    jobs: int = 1,
    mix: float = 0.5,
    blocks: str = "full_cross",
    exact: float | None = None,
) -> EstimateReport:
    """Replicated randomized estimates with bias, variance and MSE against the exact value.

    Replicate ``r`` uses the stream ``Rng(seed).child(r)``, so results do not
    depend on ``jobs``. ``k2=0`` gives the deterministic top-K baseline.
    """
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    pot = potentials.numpy()
    if quantity not in ("logz", "entropy"):
        raise ConfigError(f"unknown quantity {quantity!r}")
    if exact is None:
        exact = exact_quantity(pot, quantity)
    elif isinstance(pot, HypertreePotentials) and quantity != "logz":
        raise ConfigError("hypertrees support quantity 'logz' only")
    q = build_proposal(pot, proposal, mix)
    start = time.perf_counter()
    indices = list(range(runs))
    if jobs == 1:
        values = _replicate_block(pot, quantity, k1, k2, q, seed, indices, blocks)
    else:
        from joblib import Parallel, delayed

        chunks = [c.tolist() for c in np.array_split(np.arange(runs), max(1, min(jobs, runs)))]
        parts = Parallel(n_jobs=jobs)(
            delayed(_replicate_block)(pot, quantity, k1, k2, q, seed, c, blocks) for c in chunks if c
        )
        values = np.concatenate(parts)
    config = {
        "model": "tree" if isinstance(pot, HypertreePotentials) else "chain",
        "quantity": quantity,
        "k1": int(k1),
        "k2": int(k2),
        "proposal": proposal if isinstance(proposal, str) else "custom",
        "seed": int(seed),
        "runs": int(runs),
        "N": pot.N,
        "T": pot.T,
        "wall_clock_s": time.perf_counter() - start,
    }
    config.update({k: v for k, v in pot.meta.items() if k in ("profile", "temperature", "target_entropy")})
    return EstimateReport.from_replicates(exact, values, config)
