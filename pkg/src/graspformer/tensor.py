"""Dense tensors with a tape-free reverse-mode autodiff graph.

Every op returns a new immutable :class:`Tensor` that remembers its parents
and a closure mapping the output cotangent to parent cotangents.
:func:`grad` walks the graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32


class NumericalError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


def default_dtype() -> type:
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    # make numpy defer to our reflected operators (ndarray * Tensor -> Tensor)
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        dtype = dtype or (data.dtype if isinstance(data, (np.ndarray, np.generic)) and data.dtype.kind == "f"
                          else _DEFAULT_DTYPE)
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self.op})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Populate ``.grad`` on every leaf that requires grad."""
        leaves = [t for t in _topo_order(self) if t.requires_grad and t._backward is None]
        for leaf, g in zip(leaves, grad(self, leaves)):
            leaf.grad = g

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, p: power(self, p)

    def __getitem__(self, key) -> Tensor:
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False) -> Tensor:
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Build an op output. ``backward(g)`` returns one cotangent (or None) per parent."""
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by {op}")
    out = Tensor(data, dtype=data.dtype)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    out.op = op
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(objective: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradient of a scalar ``objective`` with respect to each of ``params``.

    Parameters unreachable from the objective receive zeros.
    """
    params = list(params)
    if objective.size != 1:
        raise ValueError(f"objective must be a scalar, got shape {objective.shape}")
    grads: dict[int, np.ndarray] = {id(objective): np.ones_like(objective.data)}
    for node in reversed(_topo_order(objective)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b) -> tuple[Tensor, Tensor]:
    # bare Python scalars adopt the tensor operand's dtype
    if isinstance(a, Tensor) and not isinstance(b, (Tensor, np.ndarray)):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, (Tensor, np.ndarray)):
        a = Tensor(a, dtype=b.dtype)
    a, b = as_tensor(a), as_tensor(b)
    if a.dtype != b.dtype:
        dt = np.promote_types(a.dtype, b.dtype)
        a, b = (t if t.dtype == dt else cast(t, dt) for t in (a, b))
    return a, b


def cast(x: Tensor, dtype) -> Tensor:
    src = x.dtype
    return make(x.data.astype(dtype), (x,), lambda g: (g.astype(src),), "cast")


def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    return make(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    return make(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    out = a.data / b.data
    return make(out, (a, b),
                lambda g: (_unbroadcast(g / b.data, a.shape),
                           _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def abs_(a) -> Tensor:
    # d|x|/dx taken as 0 at x == 0
    a = as_tensor(a)
    return make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def minimum(a, b) -> Tensor:
    # ties route the gradient to the first argument
    a, b = _binary(a, b)
    pick_a = a.data <= b.data
    return make(np.where(pick_a, a.data, b.data), (a, b),
                lambda g: (_unbroadcast(np.where(pick_a, g, 0), a.shape),
                           _unbroadcast(np.where(pick_a, 0, g), b.shape)), "minimum")


def clip(a, lo: float, hi: float) -> Tensor:
    # zero gradient where the clamp is active
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, with shared leading batch axes."""
    a, b = _binary(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def backward(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return make(a.data @ b.data, (a, b), backward, "matmul")


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def getitem(a, key) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return make(np.asarray(a.data[key]), (a,), backward, "getitem")


def pairwise_sum(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Sum with a fixed balanced-tree order so the result is reproducible."""
    arrays = list(arrays)
    if not arrays:
        raise ValueError("nothing to sum")
    while len(arrays) > 1:
        paired = [arrays[i] + arrays[i + 1] for i in range(0, len(arrays) - 1, 2)]
        if len(arrays) % 2:
            paired.append(arrays[-1])
        arrays = paired
    return arrays[0]
