"""Reverse-mode automatic differentiation over float64 numpy arrays.

Each op builds a graph node holding a backward closure; `Tensor.backward()`
runs the closures in reverse topological order, accumulating into `.grad`.
Shapes broadcast like numpy; gradients are summed back down to the
parent's shape.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ValueError(f"upstream gradient shape {grad.shape} != output shape {self.data.shape}")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- operators -------------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, backward):
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, requires_grad=True,
                  _parents=tuple(p for p in parents if p.requires_grad), _backward=backward)


def _binary(a, b, out_data, da_fn, db_fn):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(da_fn(g), a.data.shape)
            a.grad = ga if a.grad is None else a.grad + ga
        if b.requires_grad:
            gb = _unbroadcast(db_fn(g), b.data.shape)
            b.grad = gb if b.grad is None else b.grad + gb

    return _make(out_data(a.data, b.data), (a, b), backward)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g: g, lambda g: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g: g, lambda g: -g)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, lambda x, y: x * y, lambda g: g * b.data, lambda g: g * a.data)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _binary(a, b, lambda x, y: x / y,
                   lambda g: g / b.data,
                   lambda g: -g * a.data / (b.data * b.data))


def matmul(a, b):
    """Matrix product with numpy batch-dimension broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires tensors with ndim >= 2")
    return _binary(a, b, lambda x, y: x @ y,
                   lambda g: g @ np.swapaxes(b.data, -1, -2),
                   lambda g: np.swapaxes(a.data, -1, -2) @ g)


def power(a, exponent: float):
    a = as_tensor(a)
    out = a.data ** exponent

    def backward(g):
        if a.requires_grad:
            ga = g * exponent * a.data ** (exponent - 1)
            a.grad = ga if a.grad is None else a.grad + ga

    return _make(out, (a,), backward)


def _unary(a, out_data, grad_fn):
    a = as_tensor(a)
    out = out_data(a.data)

    def backward(g):
        if a.requires_grad:
            ga = grad_fn(g, out)
            a.grad = ga if a.grad is None else a.grad + ga

    return _make(out, (a,), backward)


def exp(a):
    return _unary(a, np.exp, lambda g, out: g * out)


def log(a):
    a = as_tensor(a)
    return _unary(a, np.log, lambda g, out: g / a.data)


def sqrt(a):
    return _unary(a, np.sqrt, lambda g, out: g * 0.5 / out)


def tanh(a):
    return _unary(a, np.tanh, lambda g, out: g * (1.0 - out * out))


def sigmoid(a):
    def fwd(x):
        # clip keeps exp from overflowing; saturation error is < 1e-26
        return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))

    return _unary(a, fwd, lambda g, out: g * out * (1.0 - out))


def relu(a):
    a = as_tensor(a)
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda g, out: g * (a.data > 0.0))


def abs_(a):
    a = as_tensor(a)
    return _unary(a, np.abs, lambda g, out: g * np.sign(a.data))


def sin(a):
    a = as_tensor(a)
    return _unary(a, np.sin, lambda g, out: g * np.cos(a.data))


def cos(a):
    a = as_tensor(a)
    return _unary(a, np.cos, lambda g, out: g * -np.sin(a.data))


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            ga = np.ones_like(a.data) * g
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            ga = np.broadcast_to(gg, a.data.shape).copy()
        a.grad = ga if a.grad is None else a.grad + ga

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    orig = a.data.shape
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            ga = g.reshape(orig)
            a.grad = ga if a.grad is None else a.grad + ga

    return _make(out, (a,), backward)


def transpose(a, axes=None):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            ga = np.transpose(g, inv)
            a.grad = ga if a.grad is None else a.grad + ga

    return _make(out, (a,), backward)


def getitem(a, key):
    a = as_tensor(a)
    out = a.data[key]

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, key, g)
            a.grad = ga if a.grad is None else a.grad + ga

    return _make(out, (a,), backward)


def take(a, indices, axis: int):
    """Gather along `axis` with an integer index array."""
    a = as_tensor(a)
    indices = np.asarray(indices)
    out = np.take(a.data, indices, axis=axis)

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            key = (slice(None),) * (axis % a.data.ndim) + (indices,)
            np.add.at(ga, key, g)
            a.grad = ga if a.grad is None else a.grad + ga

    return _make(out, (a,), backward)


def concat(tensors, axis: int = 0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                key = (slice(None),) * (axis % out.ndim) + (slice(lo, hi),)
                gt = g[key]
                t.grad = gt if t.grad is None else t.grad + gt

    return _make(out, tuple(tensors), backward)


def stack(tensors, axis: int = 0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                gt = np.take(g, i, axis=axis)
                t.grad = gt if t.grad is None else t.grad + gt

    return _make(out, tuple(tensors), backward)


def cross(a, b):
    """Cross product along the last axis (size 3)."""
    a, b = as_tensor(a), as_tensor(b)
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def norm(a, axis=-1, keepdims=False, eps: float = 0.0):
    """Euclidean norm along `axis`; eps regularizes the sqrt at zero."""
    s = sum_(mul(a, a), axis=axis, keepdims=keepdims)
    return sqrt(s + eps) if eps else sqrt(s)


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability `rate`, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)
