"""A small reverse-mode differentiation engine over numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it in
execution order, so walking the tape backwards is already a valid
topological order for the chain rule::

    tape = Tape()
    with tape:
        w = Tensor(np.ones(3), requires_grad=True)
        loss = (w * w).sum()
    tape.backward(loss)
    w.grad  # -> array([2., 2., 2.])
"""
from __future__ import annotations

import numpy as np
from scipy import sparse

_ACTIVE: list["Tape"] = []


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes: list = []
        self.meta: dict = {}

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: "Tensor", seed: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(x) into ``x.grad`` for every recorded input."""
        loss.grad = np.ones_like(loss.data) if seed is None else np.asarray(seed, dtype=np.float64)
        for out, parents, fn in reversed(self.nodes):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for p, g in zip(parents, grads):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return _op(self.data + other.data, (self, other), lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return _op(self.data - other.data, (self, other), lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return _op(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return _op(x * y, (self, other),
                   lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return _op(x / y, (self, other),
                   lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)))

    def __matmul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data

        def back(g):
            gx = g @ np.swapaxes(y, -1, -2) if y.ndim > 1 else np.multiply.outer(g, y)
            gy = np.swapaxes(x, -1, -2) @ g if x.ndim > 1 else np.multiply.outer(x, g)
            return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

        return _op(x @ y, (self, other), back)

    # -- elementwise ------------------------------------------------------
    def relu(self):
        mask = self.data > 0
        return _op(np.where(mask, self.data, 0.0), (self,), lambda g: (g * mask,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return _op(out, (self,), lambda g: (g * 0.5 / out,))

    # -- reductions / shape -----------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _op(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int):
        """Max over one axis; the gradient goes to the first maximal entry."""
        idx = np.argmax(self.data, axis=axis)
        out = np.take_along_axis(self.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
            return (full,)

        return _op(out, (self,), back)

    def reshape(self, *shape):
        old = self.shape
        return _op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def __getitem__(self, key):
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            full[key] = g
            return (full,)

        return _op(self.data[key], (self,), back)

    def norm(self, axis: int = -1):
        """Euclidean norm along ``axis``; gradient taken as 0 at the origin."""
        n = np.sqrt(np.sum(self.data * self.data, axis=axis))
        x = self.data

        def back(g):
            safe = np.where(n > 0, n, 1.0)
            return (np.expand_dims(np.where(n > 0, g / safe, 0.0), axis) * x,)

        return _op(n, (self,), back)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(data, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs and _ACTIVE:
        _ACTIVE[-1].nodes.append((out, parents, backward))
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
               lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


def cross(a: Tensor, b: Tensor) -> Tensor:
    """Cross product over the last axis (both operands same shape)."""
    x, y = a.data, b.data
    return _op(np.cross(x, y), (a, b), lambda g: (np.cross(y, g), np.cross(g, x)))


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """``out[g, i, c] = x[g, index[g, i, c]]`` for x of shape (G, m, d).

    The backward pass is a sparse scatter-add, which sums contributions in a
    fixed order.
    """
    G, m, d = x.shape
    k = index.shape[-1]
    flat_idx = (index + (np.arange(G) * m)[:, None, None]).reshape(-1)
    out = x.data.reshape(G * m, d)[flat_idx].reshape(G, m, k, d)

    def back(g):
        scatter = sparse.csr_matrix(
            (np.ones(flat_idx.size), (flat_idx, np.arange(flat_idx.size))), shape=(G * m, flat_idx.size)
        )
        return (np.asarray(scatter @ g.reshape(-1, d)).reshape(G, m, d),)

    return _op(out, (x,), back)
