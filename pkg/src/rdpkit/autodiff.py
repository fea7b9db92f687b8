"""Reverse-mode differentiation tape.

Each recorded node holds an ndarray value (0-d for scalars) together with the
vector-Jacobian products needed to push an adjoint back to its operands. The
tape is append-only, so recording order is already a topological order and
``backward`` is a single reverse sweep.

Memory accounting is in scalar entries: ``Tape.n_scalars`` counts every scalar
stored by an op node, which is the size a per-scalar tape would have. Leaves
(the inputs) are not counted.

Operands may be :class:`Var` or plain numbers/arrays; plain operands are
constants. An op on constants only returns a plain ndarray.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .exceptions import ConfigError, NumericalError, TapeError

__all__ = [
    "Tape",
    "Var",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "logsumexp",
    "softmax",
    "log_softmax",
    "sum",
    "take",
    "stack",
    "concatenate",
    "clip_min",
    "clip",
    "matmul",
    "transpose",
    "reshape",
    "value_of",
    "gradcheck",
]


class Tape:
    """Append-only record of operations.

    With ``record=False`` values are computed and counted but no backward
    closures are retained (an inference-only mode).
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._nodes: list[Var] = []
        self.n_nodes = 0
        self.n_scalars = 0
        self._swept = False

    def leaf(self, value) -> "Var":
        """Register an input whose adjoint should be collected."""
        return self._push(np.array(value, dtype=np.float64), (), leaf=True)

    def _push(self, value: np.ndarray, parents, leaf: bool = False) -> "Var":
        if self._swept:
            raise TapeError("tape already swept; call zero_grad() before recording more")
        var = Var(self, value, parents if self.record else ())
        if not leaf:
            self.n_nodes += 1
            self.n_scalars += value.size
        if self.record:
            var._index = len(self._nodes)
            self._nodes.append(var)
        return var

    def backward(self, output: "Var") -> None:
        """Accumulate d(output)/d(node) into ``node.grad`` for every node."""
        if not self.record:
            raise TapeError("tape was created with record=False")
        if output.tape is not self:
            raise TapeError("output does not belong to this tape")
        if output.value.size != 1:
            raise TapeError("backward needs a scalar output")
        if self._swept:
            raise TapeError("backward already called on this tape; call zero_grad() first")
        self._swept = True
        grads: list[np.ndarray | None] = [None] * len(self._nodes)
        grads[output._index] = np.ones_like(output.value)
        for idx in range(output._index, -1, -1):
            g = grads[idx]
            if g is None:
                continue
            for parent, vjp in self._nodes[idx]._parents:
                contrib = vjp(g)
                pidx = parent._index
                if pidx >= idx:
                    raise TapeError("tape is not topologically ordered")
                grads[pidx] = contrib if grads[pidx] is None else grads[pidx] + contrib
        for node, g in zip(self._nodes, grads):
            node._grad = g

    def zero_grad(self) -> None:
        for node in self._nodes:
            node._grad = None
        self._swept = False

    def __len__(self) -> int:
        return self.n_nodes


class Var:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "value", "_parents", "_index", "_grad")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, value: np.ndarray, parents):
        self.tape = tape
        self.value = value
        self._parents = tuple(parents)
        self._index = -1
        self._grad = None

    @property
    def grad(self) -> np.ndarray:
        if not self.tape._swept:
            raise TapeError("no backward pass has been run on this tape")
        return np.zeros_like(self.value) if self._grad is None else self._grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    @property
    def ndim(self):
        return self.value.ndim

    def __float__(self):
        return float(self.value)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sum(self, axis=None):
        return sum(self, axis=axis)


def value_of(x):
    """The primal value of a :class:`Var`, or the argument itself as an array."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*operands) -> Tape | None:
    tape = None
    for x in operands:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError("operands live on different tapes")
    return tape


def _record(value, operands_vjps: Sequence[tuple[object, Callable]]):
    """Create a node for ``value`` with VJPs for the Var operands only."""
    tape = _tape_of(*(op for op, _ in operands_vjps))
    value = np.asarray(value, dtype=np.float64)
    if tape is None:
        return value
    parents = [(op, vjp) for op, vjp in operands_vjps if isinstance(op, Var)]
    return tape._push(value, parents)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _record(
        av + bv,
        [(a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(g, bv.shape))],
    )


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return _record(
        av - bv,
        [(a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: -_unbroadcast(g, bv.shape))],
    )


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _record(
        av * bv,
        [
            (a, lambda g: _unbroadcast(g * bv, av.shape)),
            (b, lambda g: _unbroadcast(g * av, bv.shape)),
        ],
    )


def div(a, b):
    av, bv = value_of(a), value_of(b)
    if np.any(bv == 0):
        raise NumericalError("division by zero")
    out = av / bv
    return _record(
        out,
        [
            (a, lambda g: _unbroadcast(g / bv, av.shape)),
            (b, lambda g: _unbroadcast(-g * out / bv, bv.shape)),
        ],
    )


def neg(a):
    av = value_of(a)
    return _record(-av, [(a, lambda g: -g)])


def exp(a):
    out = np.exp(value_of(a))
    return _record(out, [(a, lambda g: g * out)])


def log(a):
    av = value_of(a)
    if np.any(av <= 0):
        raise NumericalError("log of a non-positive value")
    return _record(np.log(av), [(a, lambda g: g / av)])


def logsumexp(a, axis=None):
    """Fused log-sum-exp; its VJP is the softmax of the operand."""
    av = value_of(a)
    if av.size == 0:
        raise ConfigError("empty reduction")
    m = np.max(av, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out_k = np.log(np.sum(np.exp(av - shift), axis=axis, keepdims=True)) + shift
    out = out_k.reshape(()) if axis is None else np.squeeze(out_k, axis=axis)

    def vjp(g):
        g_k = np.reshape(g, out_k.shape)
        with np.errstate(invalid="ignore"):
            w = np.exp(av - out_k)
        w = np.where(np.isfinite(out_k), w, 0.0)
        return g_k * w

    return _record(out, [(a, vjp)])


def log_softmax(a, axis=-1):
    return sub(a, _expand(logsumexp(a, axis=axis), axis))


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis=axis))


def _expand(a, axis):
    av = value_of(a)
    shape = np.expand_dims(av, axis).shape
    return reshape(a, shape)


def sum(a, axis=None):
    av = value_of(a)
    out = np.sum(av, axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _record(out, [(a, vjp)])


def take(a, index):
    """Fancy/basic indexing; the adjoint scatters back with ``np.add.at``."""
    av = value_of(a)
    out = av[index]

    def vjp(g):
        z = np.zeros_like(av)
        np.add.at(z, index, g)
        return z

    return _record(np.array(out, dtype=np.float64), [(a, vjp)])


def stack(items, axis=0):
    values = [value_of(x) for x in items]
    out = np.stack(values, axis=axis)
    pairs = []
    for i, x in enumerate(items):
        pairs.append((x, lambda g, i=i: np.take(g, i, axis=axis)))
    return _record(out, pairs)


def concatenate(items, axis=0):
    values = [value_of(x) for x in items]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])
    pairs = []
    for i, x in enumerate(items):
        sl = slice(int(bounds[i]), int(bounds[i + 1]))
        pairs.append((x, lambda g, sl=sl: np.moveaxis(np.moveaxis(g, axis, 0)[sl], 0, axis)))
    return _record(out, pairs)


def clip_min(a, lower: float):
    av = value_of(a)
    keep = av > lower
    return _record(np.where(keep, av, lower), [(a, lambda g: g * keep)])


def clip(a, lower: float, upper: float):
    av = value_of(a)
    keep = (av > lower) & (av < upper)
    return _record(np.clip(av, lower, upper), [(a, lambda g: g * keep)])


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim not in (1, 2):
        raise ConfigError("matmul supports (m, k) @ (k,) and (m, k) @ (k, n)")
    out = av @ bv

    def vjp_a(g):
        return np.outer(g, bv) if bv.ndim == 1 else g @ bv.T

    return _record(out, [(a, vjp_a), (b, lambda g: av.T @ g)])


def transpose(a):
    return _record(value_of(a).T, [(a, lambda g: g.T)])


def reshape(a, shape):
    av = value_of(a)
    return _record(av.reshape(shape), [(a, lambda g: np.reshape(g, av.shape))])


def gradcheck(f: Callable[[Var], Var], point, eps: float = 1e-6) -> float:
    """Max relative discrepancy between tape adjoints and central differences.

    ``f`` maps a leaf :class:`Var` (shaped like ``point``) to a scalar Var.
    The error per coordinate is ``|fd - ad| / max(1, |ad|)``.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ConfigError(f"eps={eps} outside [1e-7, 1e-4]")
    x0 = np.array(point, dtype=np.float64)
    tape = Tape()
    x = tape.leaf(x0)
    out = f(x)
    tape.backward(out)
    ad = x.grad

    def evaluate(xv):
        t = Tape(record=False)
        return float(value_of(f(t.leaf(xv))))

    err = 0.0
    for i in np.ndindex(x0.shape):
        up, down = x0.copy(), x0.copy()
        up[i] += eps
        down[i] -= eps
        fd = (evaluate(up) - evaluate(down)) / (2 * eps)
        err = max(err, abs(fd - ad[i]) / max(1.0, abs(ad[i])))
    return err
