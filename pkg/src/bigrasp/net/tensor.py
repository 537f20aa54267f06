"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every op records its parents and a closure that maps the output gradient to
parent gradients. ``Tensor.backward`` walks the graph in reverse topological
order and accumulates into ``.grad``.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # ---- basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        return self

    # ---- arithmetic
    def __add__(self, other):
        other = _lift(other)
        a, b = self.shape, other.shape
        return Tensor(self.data + other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __mul__(self, other):
        other = _lift(other)
        x, y = self.data, other.data
        return Tensor(x * y, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        x, y = self.data, other.data
        return Tensor(x / y, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)))

    def __matmul__(self, other):
        other = _lift(other)
        x, y = self.data, other.data
        if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
            raise ShapeError(f"matmul shape mismatch {x.shape} @ {y.shape}")

        def back(g):
            gx = g @ np.swapaxes(y, -1, -2)
            gy = np.swapaxes(x, -1, -2) @ g
            return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

        return Tensor(x @ y, _parents=(self, other), _backward=back)

    # ---- shape ops
    def reshape(self, *shape):
        src = self.shape
        return Tensor(self.data.reshape(*shape), _parents=(self,), _backward=lambda g: (g.reshape(src),))

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor(self.data.transpose(axes), _parents=(self,), _backward=lambda g: (g.transpose(inv),))

    def swapaxes(self, a, b):
        return Tensor(np.swapaxes(self.data, a, b), _parents=(self,), _backward=lambda g: (np.swapaxes(g, a, b),))

    def __getitem__(self, idx):
        src = self.shape

        def back(g):
            out = np.zeros(src)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.data[idx], _parents=(self,), _backward=back)

    # ---- reductions
    def sum(self, axis=None, keepdims=False):
        src = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src).copy(),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,), _backward=back)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis, keepdims) / float(count)

    def max(self, axis: int):
        """Max along one axis; the gradient goes to the first maximal entry."""
        x = self.data
        arg = np.expand_dims(x.argmax(axis=axis), axis)

        def back(g):
            out = np.zeros_like(x)
            np.put_along_axis(out, arg, np.expand_dims(g, axis), axis=axis)
            return (out,)

        return Tensor(np.take_along_axis(x, arg, axis).squeeze(axis), _parents=(self,), _backward=back)

    # ---- elementwise
    def exp(self):
        y = np.exp(self.data)
        return Tensor(y, _parents=(self,), _backward=lambda g: (g * y,))

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor(y, _parents=(self,), _backward=lambda g: (g * (1 - y * y),))

    def sigmoid(self):
        y = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return Tensor(y, _parents=(self,), _backward=lambda g: (g * y * (1 - y),))

    def abs(self):
        s = np.sign(self.data)
        return Tensor(np.abs(self.data), _parents=(self,), _backward=lambda g: (g * s,))

    def sqrt(self):
        y = np.sqrt(self.data)
        return Tensor(y, _parents=(self,), _backward=lambda g: (g * 0.5 / y,))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors), _backward=back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return Tensor(y, _parents=(x,), _backward=lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU (smooth, so finite differences stay clean)."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    th = np.tanh(inner)
    y = 0.5 * v * (1.0 + th)

    def back(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + th) + 0.5 * v * (1 - th * th) * d_inner),)

    return Tensor(y, _parents=(x,), _backward=back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    var = ((v - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv
    gm, bt = gamma.data, beta.data

    def back(g):
        gx = g * gm
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gm.shape), _unbroadcast(g, bt.shape)

    return Tensor(xhat * gm + bt, _parents=(x, gamma, beta), _backward=back)


def norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is taken as zero."""
    v = x.data
    n = np.sqrt((v * v).sum(axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)

    def back(g):
        return (np.expand_dims(g, axis) * np.where(n > 0, v / safe, 0.0),)

    return Tensor(n.squeeze(axis), _parents=(x,), _backward=back)


def normalize(x: Tensor, axis: int = -1) -> Tensor:
    n = norm(x, axis)
    return x / n.reshape(*n.shape[:axis % x.ndim], 1, *n.shape[axis % x.ndim:])
