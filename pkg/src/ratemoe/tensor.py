"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a row-major numpy array. Operations build a graph of
closures; ``backward()`` on a scalar walks the graph in reverse
topological order and accumulates gradients into every reachable node
that requires them. All math is float64 and single-threaded per step,
so results are bitwise reproducible for a fixed seed.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.grad = None
        self._backward = None
        self._prev = ()

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient machinery --------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Populate ``grad`` on every reachable node that requires it."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def max(self, axis: int = -1, keepdims: bool = False) -> "Tensor":
        return max_(self, axis, keepdims)


class Parameter(Tensor):
    """A named leaf tensor that always participates in differentiation."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64))
        self.requires_grad = True
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _parents(*tensors: Tensor) -> tuple:
    return tuple(t for t in tensors if t.requires_grad)


def _make(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    """Wrap an op result, recording graph edges only when a parent needs them."""
    rg = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rg)
    if rg:
        out._prev = _parents(*parents)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing broadcast axes."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = _make(a.data + b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = _make(a.data - b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = _make(a.data * b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = _make(a.data / b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def pow_scalar(a, exponent) -> Tensor:
    if not isinstance(exponent, (int, float)):
        raise ContractError("only scalar exponents are supported")
    a = astensor(a)
    out = _make(a.data ** exponent, (a,))

    def backward():
        a._accumulate(out.grad * exponent * a.data ** (exponent - 1))

    out._backward = backward if out.requires_grad else None
    return out


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = _make(np.matmul(a.data, b.data), (a, b))

    def backward():
        if a.requires_grad:
            ga = np.matmul(out.grad, b.data.swapaxes(-1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(a.data.swapaxes(-1, -2), out.grad)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


# -- shape manipulation ---------------------------------------------------


def reshape(a, shape: tuple) -> Tensor:
    a = astensor(a)
    out = _make(a.data.reshape(shape), (a,))

    def backward():
        a._accumulate(out.grad.reshape(a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def transpose(a, axes=None) -> Tensor:
    a = astensor(a)
    out = _make(a.data.transpose(axes), (a,))
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))

    def backward():
        a._accumulate(out.grad.transpose(inverse))

    out._backward = backward if out.requires_grad else None
    return out


def take(a, key) -> Tensor:
    """Basic (slice/integer) indexing with gradient scatter on backward."""
    a = astensor(a)
    out = _make(a.data[key].copy(), (a,))

    def backward():
        g = np.zeros_like(a.data)
        g[key] += out.grad
        a._accumulate(g)

    out._backward = backward if out.requires_grad else None
    return out


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [astensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat needs at least one tensor")
    out = _make(np.concatenate([t.data for t in ts], axis=axis), ts)
    sizes = [t.data.shape[axis] for t in ts]

    def backward():
        offset = 0
        for t, size in zip(ts, sizes):
            if t.requires_grad:
                index = [slice(None)] * out.grad.ndim
                index[axis] = slice(offset, offset + size)
                t._accumulate(out.grad[tuple(index)])
            offset += size

    out._backward = backward if out.requires_grad else None
    return out


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [astensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)


def select_index(a, indices: np.ndarray, axis: int) -> Tensor:
    """Pick one entry per position along ``axis`` (a gather).

    ``indices`` aligns with the leading dims of ``a`` and broadcasts over
    any trailing ones; the selection itself is a constant, so gradients
    flow only to the selected entries.
    """
    a = astensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    while idx.ndim < a.ndim - 1:
        idx = idx[..., None]
    axis = axis if axis >= 0 else a.ndim + axis
    expanded = np.expand_dims(idx, axis)
    picked = np.take_along_axis(a.data, expanded, axis=axis)
    out = _make(np.squeeze(picked, axis=axis), (a,))

    def backward():
        g = np.zeros_like(a.data)
        np.put_along_axis(g, expanded, np.expand_dims(out.grad, axis), axis=axis)
        a._accumulate(g)

    out._backward = backward if out.requires_grad else None
    return out


# -- reductions ------------------------------------------------------------


def _keepdims_shape(shape: tuple, axis) -> tuple:
    if axis is None:
        return (1,) * len(shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(ax % len(shape) for ax in axes)
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def backward():
        g = out.grad.reshape(_keepdims_shape(a.data.shape, axis))
        a._accumulate(np.broadcast_to(g, a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    out = _make(a.data.mean(axis=axis, keepdims=keepdims), (a,))
    count = a.data.size if axis is None else a.data.size // out.data.size

    def backward():
        g = out.grad.reshape(_keepdims_shape(a.data.shape, axis))
        a._accumulate(np.broadcast_to(g, a.data.shape) / count)

    out._backward = backward if out.requires_grad else None
    return out


def max_(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; ties send the gradient to the lowest index."""
    a = astensor(a)
    idx = np.argmax(a.data, axis=axis)
    expanded = np.expand_dims(idx, axis)
    data = np.take_along_axis(a.data, expanded, axis=axis)
    if not keepdims:
        data = np.squeeze(data, axis=axis)
    out = _make(data, (a,))

    def backward():
        g = out.grad if keepdims else np.expand_dims(out.grad, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, expanded, g, axis=axis)
        a._accumulate(full)

    out._backward = backward if out.requires_grad else None
    return out
