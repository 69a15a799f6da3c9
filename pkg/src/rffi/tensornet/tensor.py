"""Reverse-mode differentiation core: the Tensor node and elementwise ops.

Every op builds a node whose ``_backward`` closure receives the output
gradient and pushes contributions into its parents with ``_accumulate``.
Gradients are summed in a fixed (reverse topological) order, so results
are reproducible run to run.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the graph (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g, index=None):
        if not self.requires_grad:
            return
        if index is None:
            g = _unbroadcast(g, self.data.shape)
            if self.grad is None:
                self.grad = np.array(g, dtype=self.data.dtype, copy=True)
            else:
                self.grad += g
        else:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            if _has_fancy_index(index):
                np.add.at(self.grad, index, g)
            else:
                self.grad[index] += g

    def backward(self, grad=None):
        """Backpropagate from this tensor; ``grad`` defaults to ones."""
        if grad is None:
            grad = np.ones_like(self.data)
        order = _topological(self)
        self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior gradients are not needed once propagated
                node.grad = None

    # -- operator sugar ----------------------------------------------------

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _has_fancy_index(index) -> bool:
    # fancy integer indexing may repeat positions; slices and ints never do
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _topological(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_node(data, parents, backward) -> Tensor:
    """Wrap an op result; records the graph only when it is needed."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _pair(a, b):
    """Promote plain numbers/arrays to constant tensors of the partner's dtype."""
    if not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    if not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    return a, b


# --- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return make_node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        a._accumulate(g)
        b._accumulate(-g)

    return make_node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return make_node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / b.data)
        if b.requires_grad:
            b._accumulate(-g * a.data / b.data**2)

    return make_node(a.data / b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return make_node(x.data * mask, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        x._accumulate(g * y * (1.0 - y))

    return make_node(y, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - y * y))

    return make_node(y, (x,), backward)


# --- linear algebra and shape ops -----------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
            a._accumulate(ga)
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(a.data, g)
            elif b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(gb)

    return make_node(a.data @ b.data, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return make_node(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        x._accumulate(np.transpose(g, inv))

    return make_node(np.transpose(x.data, axes), (x,), backward)


def getitem(x: Tensor, index) -> Tensor:
    def backward(g):
        x._accumulate(g, index=index)

    return make_node(x.data[index], (x,), backward)


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def backward(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    return make_node(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            t._accumulate(piece)

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return make_node(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g / count, x.shape))

    return make_node(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return make_node(y, (x,), backward)
