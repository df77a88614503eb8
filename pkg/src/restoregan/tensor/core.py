"""Dense tensors on a reverse-mode tape.

Every op returns a new :class:`Tensor` holding the parents it was computed
from and a closure mapping the output gradient to one gradient per parent.
:func:`backward` walks that graph in reverse topological order.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from ..errors import NumericDomainError, StructuralError

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = "leaf"):
        arr = np.asarray(data)
        if arr.dtype != np.float64:
            arr = arr.astype(DEFAULT_DTYPE, copy=False)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if (requires_grad and _backward is None) else None
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise StructuralError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar; each maps onto a named op below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor_create(shape: Sequence[int], values, requires_grad: bool = False, dtype=None) -> Tensor:
    """Build a tensor from a shape and a flat row-major value list."""
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise StructuralError(f"all dimensions must be >= 1, got {list(shape)}")
    flat = np.asarray(values, dtype=dtype or DEFAULT_DTYPE).reshape(-1)
    if flat.size != math.prod(shape):
        raise StructuralError(f"shape {list(shape)} needs {math.prod(shape)} values, got {flat.size}")
    return Tensor(flat.reshape(shape).copy(), requires_grad=requires_grad)


def _make(data: np.ndarray, parents: tuple, backward_fn: Callable, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)
    return Tensor(data, op=op)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(like.shape, x, dtype=like.dtype))


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate across calls until reset.
    """
    if loss.data.size != 1:
        raise StructuralError(f"backward() needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        return
    seed = np.ones_like(loss.data)
    grads = {id(loss): seed}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if not loss.is_leaf:
        loss.grad = seed


# ---------------------------------------------------------------- elementwise

def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise StructuralError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    _check_same(a, b, "mul")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2 * g * x.data,), "square")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericDomainError("log of a non-positive value; clamp the argument first")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def clamp_min(x: Tensor, lo: float) -> Tensor:
    keep = x.data >= lo
    out = np.where(keep, x.data, x.dtype.type(lo))
    return _make(out, (x,), lambda g: (g * keep,), "clamp_min")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype, copy=False)
    return _make(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise StructuralError(f"unknown activation {kind!r}")


def prelu(x: Tensor, a: Tensor) -> Tensor:
    """max(0, x) + a * min(0, x) with a single learnable slope."""
    if a.size != 1:
        raise StructuralError("prelu slope must be a single scalar")
    neg_part = np.minimum(x.data, 0)
    slope = a.data.reshape(())
    out = np.maximum(x.data, 0) + slope * neg_part

    def _bw(g):
        gx = np.where(x.data > 0, g, g * slope)
        ga = np.sum(g * neg_part).reshape(a.shape)
        return gx, ga

    return _make(out, (x, a), _bw, "prelu")


# ---------------------------------------------------------------- reductions

def _check_nonempty(x: Tensor, op: str) -> None:
    if x.size == 0:
        raise StructuralError(f"{op} of an empty tensor")


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    _check_nonempty(x, "sum")
    if axis is None:
        return _make(np.sum(x.data).reshape(1), (x,), lambda g: (np.broadcast_to(g.reshape(()), x.shape).copy(),), "sum")
    axis = axis % x.data.ndim
    return _make(np.sum(x.data, axis=axis), (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),), "sum")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    _check_nonempty(x, "mean")
    if axis is None:
        inv = x.dtype.type(1.0 / x.size)
        return _make(np.mean(x.data).reshape(1), (x,),
                     lambda g: (np.broadcast_to(g.reshape(()) * inv, x.shape).copy(),), "mean")
    axis = axis % x.data.ndim
    inv = x.dtype.type(1.0 / x.shape[axis])
    return _make(np.mean(x.data, axis=axis), (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g * inv, axis), x.shape).copy(),), "mean")


def max(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    """Maximum; the gradient goes to the first maximal element (lowest index)."""
    _check_nonempty(x, "max")
    if axis is None:
        idx = int(np.argmax(x.data))

        def _bw(g):
            gx = np.zeros_like(x.data)
            gx.reshape(-1)[idx] = g.reshape(())
            return (gx,)

        return _make(x.data.reshape(-1)[idx:idx + 1].copy(), (x,), _bw, "max")
    axis = axis % x.data.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)

    def _bw_axis(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(np.take_along_axis(x.data, idx, axis=axis).squeeze(axis), (x,), _bw_axis, "max")


def reduce(kind: str, x: Tensor) -> Tensor:
    fn = {"mean": mean, "sum": sum, "max": max}.get(kind)
    if fn is None:
        raise StructuralError(f"unknown reduction {kind!r}")
    return fn(x)


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise StructuralError(str(exc)) from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def take(x: Tensor, index) -> Tensor:
    """Indexing with numpy semantics; repeated fancy indices accumulate."""
    out = x.data[index]
    if out.ndim == 0:
        out = out.reshape(1)

    def _bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g.reshape(x.data[index].shape))
        return (gx,)

    return _make(np.array(out, copy=True), (x,), _bw, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise StructuralError("concat of an empty list")
    ndim = tensors[0].data.ndim
    axis = axis % ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(a != b for i, (a, b) in enumerate(zip(ref, t.shape)) if i != axis):
            raise StructuralError(f"concat: incompatible shapes {list(ref)} and {list(t.shape)} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.data.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise StructuralError("concat_channels expects [B,C,H,W] tensors")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise StructuralError(f"concat_channels: {list(a.shape)} vs {list(b.shape)}")
    return concat([a, b], axis=1)


# ---------------------------------------------------------------- dense / softmax

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x [B,F] @ w [F,O] + b [O]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise StructuralError(f"linear: x {list(x.shape)}, w {list(w.shape)}, b {list(b.shape)}")
    out = x.data @ w.data + b.data

    def _bw(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _make(out, (x, w, b), _bw, "linear")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), _bw, "softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise StructuralError(f"cross_entropy: logits {list(logits.shape)}, labels {list(labels.shape)}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(labels.size)
    loss = -logp[rows, labels].mean()

    def _bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g.reshape(()) / labels.size),)

    return _make(np.asarray(loss, dtype=logits.dtype).reshape(1), (logits,), _bw, "cross_entropy")


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "abs": abs, "log": log, "square": square,
    "negate": neg, "scale-by-constant": scale, "clamp-min": clamp_min,
}


def elementwise(op_kind: str, *operands) -> Tensor:
    fn = _ELEMENTWISE.get(op_kind)
    if fn is None:
        raise StructuralError(f"unknown elementwise op {op_kind!r}")
    return fn(*operands)
