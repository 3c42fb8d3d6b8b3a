"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation produces a new :class:`Tensor` that remembers
its parents and a backward rule. Calling :meth:`Tensor.backward` records the
graph into a :class:`Tape` (a topologically ordered list of nodes) and replays
it in reverse. Gradients land on leaf tensors that have ``requires_grad`` set;
intermediate gradients are discarded as soon as they have been propagated.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from ..errors import ShapeError
from . import kernels

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording the graph (inference only)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


_margins: dict[str, float] | None = None


@contextlib.contextmanager
def watch_margins() -> Iterator[dict[str, float]]:
    """Record how close ``relu``/``leaky_relu`` inputs come to 0 and ``sqrt`` inputs to 0.

    The yielded dict maps op name to the smallest ``|x|`` seen. Finite
    differences are only trustworthy when these stay clear of the step size.
    """
    global _margins
    previous = _margins
    _margins = {}
    try:
        yield _margins
    finally:
        _margins = previous


def _note(op: str, x: np.ndarray) -> None:
    if _margins is not None and x.size:
        _margins[op] = min(_margins.get(op, np.inf), float(np.abs(x).min()))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        rows = math.prod(grad.shape[:extra])
        grad = _column_sum(grad.reshape(rows, -1)).reshape(grad.shape[extra:])
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _column_sum(x2: np.ndarray) -> np.ndarray:
    """Sum over rows of a 2-D array (a gemv is much faster than ``sum(axis=0)``)."""
    return np.ones(x2.shape[0], dtype=DTYPE) @ x2


class Tensor:
    """An immutable float64 array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(Tensor)
        out.data = data if data.dtype == DTYPE else data.astype(DTYPE)
        out.grad = None
        out.name = None
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # basic properties

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._result(self.data, (), lambda g: (), "detach")

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # differentiation

    def backward(self, grad: np.ndarray | None = None) -> "Tape":
        tape = Tape(self)
        tape.backward(grad)
        return tape

    # operator sugar

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Topologically ordered record of the graph below ``root``.

    ``nodes`` lists every tensor reachable from the root, inputs before the
    operations that consume them. :meth:`backward` can be replayed any
    number of times; each replay overwrites leaf gradients rather than
    accumulating into them.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = self._toposort(root)

    @staticmethod
    def _toposort(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    @property
    def ops(self) -> list[Tensor]:
        return [n for n in self.nodes if not n.is_leaf]

    @property
    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def backward(self, grad: np.ndarray | None = None) -> dict[int, np.ndarray]:
        root = self.root
        if grad is None:
            if root.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a scalar, got shape {root.shape}")
            grad = np.ones_like(root.data)
        grads: dict[int, np.ndarray] = {id(root): np.asarray(grad, dtype=DTYPE)}
        for leaf in self.leaves:
            leaf.grad = None
        out: dict[int, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g
                    out[id(node)] = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for leaf in self.leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
        return out


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._result(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub"
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    if exponent == 2:
        return Tensor._result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")
    return Tensor._result(
        a.data**exponent, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow"
    )


def square(a: Tensor) -> Tensor:
    return power(a, 2)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    _note("sqrt", a.data)
    out = np.sqrt(a.data)
    return Tensor._result(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def relu(a: Tensor) -> Tensor:
    _note("relu", a.data)
    out = np.maximum(a.data, 0.0)
    return Tensor._result(out, (a,), lambda g: (g * (out > 0),), "relu")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    """``max(x, slope*x)``; the derivative at exactly zero is taken as 1."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = a.data
    _note("leaky_relu", x)

    def backward(g):
        factor = (x >= 0) * (1.0 - slope) + slope
        return (g * factor,)

    return Tensor._result(np.maximum(x, slope * x), (a,), backward, "leaky_relu")


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation (smooth everywhere)."""
    x = np.ascontiguousarray(a.data).reshape(-1)
    out = np.empty_like(x)
    slope = np.empty_like(x)
    kernels.gelu_forward(x, out, slope)
    slope = slope.reshape(a.shape)
    return Tensor._result(out.reshape(a.shape), (a,), lambda g: (g * slope,), "gelu")


# reductions and shape manipulation


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    axes = _normalize_axes(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return Tensor._result(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = math.prod(a.shape[i] for i in axes)
    return tsum(a, axes, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return Tensor._result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return Tensor._result(
        a.data.swapaxes(ax1, ax2), (a,), lambda g: (g.swapaxes(ax1, ax2),), "swapaxes"
    )


def broadcast_to(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._result(
        np.broadcast_to(a.data, shape), (a,), lambda g: (_unbroadcast(g, old),), "broadcast_to"
    )


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, type(Ellipsis), type(None))) for k in parts)


def getitem(a: Tensor, key) -> Tensor:
    shape = a.shape
    basic = _is_basic_index(key)

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return Tensor._result(np.asarray(a.data[key]), (a,), backward, "getitem")


def index_select(a: Tensor, indices, axis: int) -> Tensor:
    """Gather distinct ``indices`` along ``axis``."""
    indices = np.asarray(indices, dtype=np.intp)
    if len(np.unique(indices)) != len(indices):
        raise ValueError("index_select requires distinct indices")
    axis = axis % a.ndim
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        idx = (slice(None),) * axis + (indices,)
        full[idx] = g
        return (full,)

    return Tensor._result(np.take(a.data, indices, axis=axis), (a,), backward, "index_select")


def take(table: Tensor, indices: np.ndarray) -> Tensor:
    """Look up entries of a 1-D ``table`` by an integer array of any shape."""
    if table.ndim != 1:
        raise ShapeError(f"take expects a 1-D table, got shape {table.shape}")
    indices = np.asarray(indices, dtype=np.intp)
    n = table.shape[0]

    def backward(g):
        return (np.bincount(indices.ravel(), weights=g.ravel(), minlength=n).astype(DTYPE),)

    return Tensor._result(table.data[indices], (table,), backward, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % (tensors[0].ndim + 1)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._result(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, broadcasting any leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` applied over the last axis of ``x``."""
    n_in, n_out = weight.shape
    if x.shape[-1] != n_in:
        raise ShapeError(f"linear dimension mismatch: input {x.shape} vs weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, n_in)
    out = x2 @ weight.data
    if bias is not None:
        out += bias.data

    def backward(g):
        g2 = g.reshape(-1, n_out)
        gx = (g2 @ weight.data.T).reshape(lead + (n_in,)) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, _column_sum(g2)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out.reshape(lead + (n_out,)), parents, backward, "linear")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if axis not in (-1, a.ndim - 1):
        moved = transpose(a, _move_last(a.ndim, axis))
        return transpose(softmax(moved), tuple(np.argsort(_move_last(a.ndim, axis))))
    width = a.shape[-1]
    x2 = np.ascontiguousarray(a.data.reshape(-1, width))
    out = np.empty_like(x2)
    kernels.softmax_forward(x2, out)

    def backward(g):
        gx = np.empty_like(out)
        kernels.softmax_backward(np.ascontiguousarray(g.reshape(-1, width)), out, gx)
        return (gx.reshape(a.shape),)

    return Tensor._result(out.reshape(a.shape), (a,), backward, "softmax")


def _move_last(ndim: int, axis: int) -> tuple[int, ...]:
    axis = axis % ndim
    return tuple(i for i in range(ndim) if i != axis) + (axis,)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (a,), backward, "log_softmax")


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (biased variance, ``eps`` inside the root), then scale and shift."""
    d = x.shape[-1]
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    out = np.empty_like(x2)
    xhat = np.empty_like(x2)
    rstd = np.empty(x2.shape[0])
    kernels.layer_norm_forward(x2, weight.data, bias.data, eps, out, xhat, rstd)

    def backward(g):
        gx = np.empty_like(xhat)
        gw = np.empty(d)
        gb = np.empty(d)
        kernels.layer_norm_backward(np.ascontiguousarray(g.reshape(-1, d)), xhat, rstd, weight.data, gx, gw, gb)
        return gx.reshape(x.shape), gw, gb

    return Tensor._result(out.reshape(x.shape), (x, weight, bias), backward, "layer_norm")


def _attention_core(q: np.ndarray, k: np.ndarray, v: np.ndarray):
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = np.matmul(q, np.swapaxes(k, -1, -2))
    scores *= scale
    length = scores.shape[-1]
    probs = np.empty_like(scores)
    kernels.softmax_forward(scores.reshape(-1, length), probs.reshape(-1, length))
    return np.matmul(probs, v), probs, scale


def _attention_grads(g, q, k, v, probs, scale):
    length = probs.shape[-1]
    gv = np.matmul(np.swapaxes(probs, -1, -2), g)
    gp = np.matmul(g, np.swapaxes(v, -1, -2))
    gs = np.empty_like(gp)
    kernels.softmax_backward(gp.reshape(-1, length), probs.reshape(-1, length), gs.reshape(-1, length))
    gs *= scale
    gq = np.matmul(gs, k)
    gk = np.matmul(np.swapaxes(gs, -1, -2), q)
    return gq, gk, gv


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """``softmax(q k^T / sqrt(d)) v`` over the last two axes, as one fused op."""
    if not (q.shape == k.shape == v.shape) or q.ndim < 2:
        raise ShapeError(f"attention expects equal shapes, got {q.shape}, {k.shape}, {v.shape}")
    out, probs, scale = _attention_core(q.data, k.data, v.data)

    def backward(g):
        return _attention_grads(g, q.data, k.data, v.data, probs, scale)

    return Tensor._result(out, (q, k, v), backward, "attention")


def stop_gradient(x: Tensor) -> Tensor:
    return x.detach()


def parameters_in(tensors: Iterable[Tensor]) -> list[Tensor]:
    """Distinct trainable leaves reachable from ``tensors``."""
    found: dict[int, Tensor] = {}
    for t in tensors:
        for leaf in Tape(t).leaves:
            found.setdefault(id(leaf), leaf)
    return list(found.values())
