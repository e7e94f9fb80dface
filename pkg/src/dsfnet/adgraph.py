"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every non-leaf :class:`Node` carries the record of the operation that produced
it.  ``backward`` assembles the reachable records into a :class:`Tape` ordered
by creation (a topological order, since a node is always created after its
inputs) and replays it in reverse, summing cotangents in record order.

Only first-order gradients are supported.  Broadcasting is limited to
scalar-with-array; row-wise bias addition goes through :func:`broadcast_rows`.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "Node",
    "Record",
    "Tape",
    "leaf",
    "const",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "absolute",
    "log",
    "exp",
    "arctan",
    "relu",
    "minimum",
    "maximum",
    "clamp",
    "elementwise",
    "unary",
    "matmul",
    "transpose",
    "reshape",
    "take",
    "scatter",
    "concat",
    "broadcast_rows",
    "total",
    "softmax_rows",
    "layer_norm_rows",
    "stop_gradient",
    "straight_through",
    "backward",
    "grad_check",
]

_ids = itertools.count()
_state = threading.local()


class NonFiniteError(FloatingPointError):
    """An operation produced (or would produce) a non-finite value."""


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording; every produced node is a constant."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@dataclass(frozen=True)
class Record:
    op: str
    inputs: tuple["Node", ...]
    output_id: int
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Node:
    """A value in the differentiation graph.

    ``value`` is never mutated after construction.  ``grad`` is filled in by
    :func:`backward` for leaves and reads as zeros before that.
    """

    __slots__ = ("id", "value", "requires_grad", "record", "_grad", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad=False, record=None):
        self.id = next(_ids)
        arr = np.array(value, dtype=np.float64)
        arr.flags.writeable = False
        self.value = arr
        self.requires_grad = bool(requires_grad)
        self.record = record
        self._grad = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return self.record is None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        kind = self.record.op if self.record else "leaf"
        return f"Node(id={self.id}, op={kind}, shape={self.shape})"

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

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        return backward(self)


def leaf(value, requires_grad: bool = True) -> Node:
    return Node(value, requires_grad=requires_grad)


def const(value) -> Node:
    return Node(value, requires_grad=False)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _make(value, op: str, inputs: Sequence[Node], vjp) -> Node:
    if _grad_enabled() and any(i.requires_grad for i in inputs):
        node = Node(value, requires_grad=True)
        node.record = Record(op, tuple(inputs), node.id, vjp)
        return node
    return Node(value)


def _check_finite(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    return value


def _check_broadcast(a: Node, b: Node, op: str):
    if a.shape != b.shape and a.value.ndim != 0 and b.value.ndim != 0:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # only scalar broadcasting is supported
    return np.asarray(g.sum()).reshape(shape)


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, "sub", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, "mul", (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "div")
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise NonFiniteError("div: division by zero")
    out = _check_finite(av / bv, "div")
    return _make(out, "div", (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape),
                            _unbroadcast(-g * av / (bv * bv), bv.shape)))


def neg(a) -> Node:
    a = _as_node(a)
    return _make(-a.value, "neg", (a,), lambda g: (-g,))


def absolute(a) -> Node:
    a = _as_node(a)
    sign = np.sign(a.value)  # subgradient 0 at exactly 0
    return _make(np.abs(a.value), "abs", (a,), lambda g: (g * sign,))


def log(a) -> Node:
    a = _as_node(a)
    av = a.value
    if np.any(av <= 0):
        raise NonFiniteError("log: non-positive argument")
    return _make(np.log(av), "log", (a,), lambda g: (g / av,))


def exp(a) -> Node:
    a = _as_node(a)
    with np.errstate(over="ignore"):
        out = _check_finite(np.exp(a.value), "exp")
    return _make(out, "exp", (a,), lambda g: (g * out,))


def arctan(a) -> Node:
    a = _as_node(a)
    av = a.value
    return _make(np.arctan(av), "arctan", (a,), lambda g: (g / (1.0 + av * av),))


def relu(a) -> Node:
    a = _as_node(a)
    mask = (a.value > 0).astype(np.float64)
    return _make(a.value * mask, "relu", (a,), lambda g: (g * mask,))


def minimum(a, b) -> Node:
    """Pairwise minimum; on ties the gradient goes to ``a``."""
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "min")
    pick_a = (a.value <= b.value).astype(np.float64)
    sa, sb = a.shape, b.shape
    out = np.where(pick_a > 0, a.value, b.value)
    return _make(out, "min", (a, b),
                 lambda g: (_unbroadcast(g * pick_a, sa), _unbroadcast(g * (1 - pick_a), sb)))


def maximum(a, b) -> Node:
    """Pairwise maximum; on ties the gradient goes to ``a``."""
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "max")
    pick_a = (a.value >= b.value).astype(np.float64)
    sa, sb = a.shape, b.shape
    out = np.where(pick_a > 0, a.value, b.value)
    return _make(out, "max", (a, b),
                 lambda g: (_unbroadcast(g * pick_a, sa), _unbroadcast(g * (1 - pick_a), sb)))


def clamp(a, lo: float, hi: float) -> Node:
    a = _as_node(a)
    inside = ((a.value >= lo) & (a.value <= hi)).astype(np.float64)
    return _make(np.clip(a.value, lo, hi), "clamp", (a,), lambda g: (g * inside,))


def unary(a, fn: Callable[[np.ndarray], np.ndarray],
          dfn: Callable[[np.ndarray], np.ndarray], name: str) -> Node:
    """Custom elementwise primitive given its value and derivative functions."""
    a = _as_node(a)
    av = a.value
    out = _check_finite(np.asarray(fn(av), dtype=np.float64), name)
    return _make(out, name, (a,), lambda g: (g * dfn(av),))


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "min": minimum,
           "min-pair": minimum, "max": maximum, "max-pair": maximum}
_UNARY = {"neg": neg, "abs": absolute, "log": log, "exp": exp,
          "arctan": arctan, "relu": relu}


def elementwise(op: str, a, b=None, **kwargs) -> Node:
    """Dispatch an elementwise op by name (``clamp`` takes ``lo``/``hi``)."""
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    if op == "clamp":
        return clamp(a, kwargs["lo"], kwargs["hi"])
    raise ValueError(f"unknown elementwise op {op!r}")


# --------------------------------------------------------------------------
# structural
# --------------------------------------------------------------------------


def matmul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul: shape mismatch {av.shape} @ {bv.shape}")
    return _make(_row_product(av, bv), "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


def _row_product(av: np.ndarray, bv: np.ndarray) -> np.ndarray:
    """``av @ bv`` with one fixed summation order for every row.

    BLAS kernels may block rows differently depending on their position, so
    permuting the rows of ``av`` could change the last bit of a result.
    """
    return (av[:, :, None] * bv[None, :, :]).sum(axis=1)


def transpose(a) -> Node:
    a = _as_node(a)
    return _make(a.value.T, "transpose", (a,), lambda g: (g.T,))


def reshape(a, shape) -> Node:
    a = _as_node(a)
    old = a.shape
    return _make(a.value.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def take(a, indices) -> Node:
    """Gather from the flattened array; output has the shape of ``indices``."""
    a = _as_node(a)
    idx = np.asarray(indices, dtype=np.intp)
    size, shape = a.value.size, a.shape

    def vjp(g):
        out = np.zeros(size)
        np.add.at(out, idx.ravel(), g.ravel())
        return (out.reshape(shape),)

    return _make(a.value.ravel()[idx], "take", (a,), vjp)


def scatter(a, flat_indices, shape) -> Node:
    """Place ``a`` (flattened) at distinct flat positions of a zero array."""
    a = _as_node(a)
    idx = np.asarray(flat_indices, dtype=np.intp).ravel()
    if idx.size != a.value.size:
        raise ValueError("scatter: index count does not match value count")
    if np.unique(idx).size != idx.size:
        raise ValueError("scatter: duplicate target positions")
    out = np.zeros(int(np.prod(shape)))
    out[idx] = a.value.ravel()
    src_shape = a.shape
    return _make(out.reshape(shape), "scatter", (a,),
                 lambda g: (g.ravel()[idx].reshape(src_shape),))


def concat(nodes: Iterable, axis: int = 0) -> Node:
    nodes = [_as_node(n) for n in nodes]
    sizes = [n.value.shape[axis] if n.value.ndim else 1 for n in nodes]
    vals = [n.value if n.value.ndim else n.value.reshape(1) for n in nodes]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        parts = np.split(g, cuts, axis=axis)
        return tuple(p.reshape(n.shape) for p, n in zip(parts, nodes))

    return _make(np.concatenate(vals, axis=axis), "concat", nodes, vjp)


def broadcast_rows(b, m: int) -> Node:
    """Repeat a length-n vector into an (m, n) matrix."""
    b = _as_node(b)
    if b.value.ndim != 1:
        raise ValueError("broadcast_rows expects a vector")
    return _make(np.tile(b.value, (m, 1)), "broadcast_rows", (b,), lambda g: (g.sum(axis=0),))


def total(a) -> Node:
    a = _as_node(a)
    shape = a.shape
    return _make(a.value.sum(), "sum", (a,), lambda g: (np.full(shape, float(g)),))


def softmax_rows(a) -> Node:
    a = _as_node(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _make(p, "softmax_rows", (a,), vjp)


def layer_norm_rows(a, gain, bias, eps: float = 1e-5) -> Node:
    a, gain, bias = _as_node(a), _as_node(gain), _as_node(bias)
    x = a.value
    n = x.shape[1]
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    if np.any(var + eps <= 0):
        raise NonFiniteError("layer_norm_rows: zero variance with eps=0")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gain.value

    def vjp(g):
        gx = g * gv
        dx = inv * (gx - gx.mean(axis=1, keepdims=True)
                    - xhat * (gx * xhat).sum(axis=1, keepdims=True) / n)
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(xhat * gv + bias.value, "layer_norm_rows", (a, gain, bias), vjp)


def stop_gradient(a) -> Node:
    """Forward identity (bitwise); contributes nothing to the backward pass."""
    a = _as_node(a)
    return Node(a.value)


def straight_through(forward_value, surrogate) -> Node:
    """``(forward_value - surrogate)_sg + surrogate`` without the rounding.

    The output value is ``forward_value`` bit-for-bit and the cotangent is
    routed unchanged to ``surrogate``.
    """
    surrogate = _as_node(surrogate)
    fv = forward_value.value if isinstance(forward_value, Node) else np.asarray(forward_value, np.float64)
    if fv.shape != surrogate.shape:
        raise ValueError("straight_through: shape mismatch")
    return _make(fv, "straight_through", (surrogate,), lambda g: (g,))


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------


class Tape:
    """The records reachable from one output, in creation order."""

    def __init__(self, records: list[Record]):
        self.records = records

    @classmethod
    def from_output(cls, output: Node) -> "Tape":
        seen: dict[int, Record] = {}
        stack = [output]
        while stack:
            node = stack.pop()
            rec = node.record
            if rec is None or node.id in seen:
                continue
            seen[node.id] = rec
            stack.extend(i for i in rec.inputs if i.requires_grad)
        return cls([seen[k] for k in sorted(seen)])

    def __len__(self):
        return len(self.records)

    def replay(self, output: Node) -> dict[Node, np.ndarray]:
        grads: dict[int, np.ndarray] = {output.id: np.ones_like(output.value)}
        leaves: dict[int, Node] = {}
        if output.is_leaf and output.requires_grad:
            leaves[output.id] = output
        for rec in reversed(self.records):
            g = grads.pop(rec.output_id, None)
            if g is None:
                continue
            for node, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None or not node.requires_grad:
                    continue
                if node.id in grads:
                    grads[node.id] = grads[node.id] + gi
                else:
                    grads[node.id] = gi
                if node.is_leaf:
                    leaves[node.id] = node
        out = {}
        for k in sorted(leaves):
            node = leaves[k]
            g = np.asarray(grads.get(k, np.zeros_like(node.value)), dtype=np.float64).reshape(node.shape)
            node._grad = g
            out[node] = g
        return out


def backward(output: Node) -> dict[Node, np.ndarray]:
    """Gradients of a scalar ``output`` for every reachable requires-grad leaf.

    Also stores each gradient on ``leaf.grad`` (overwriting previous results).
    """
    if output.value.size != 1 or output.value.ndim > 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    return Tape.from_output(output).replay(output)


def grad_check(f: Callable[..., Node], point: Sequence, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` receives one Node per entry of ``point`` and must return a scalar
    Node.  Error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    arrays = [np.array(p, dtype=np.float64) for p in point]
    leaves = [leaf(a) for a in arrays]
    out = f(*leaves)
    backward(out)
    worst = 0.0
    for k, a in enumerate(arrays):
        analytic = leaves[k].grad.ravel()
        flat = a.ravel()
        for i in range(flat.size):
            vals = []
            for step in (h, -h):
                pert = flat.copy()
                pert[i] += step
                args = [const(x) for x in arrays]
                args[k] = const(pert.reshape(a.shape))
                with no_grad():
                    vals.append(f(*args).item())
            numeric = (vals[0] - vals[1]) / (2 * h)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            worst = max(worst, err)
    return worst
