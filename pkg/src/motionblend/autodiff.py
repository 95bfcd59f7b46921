"""Small reverse-mode automatic differentiation over numpy arrays.

The fitting losses are built from a modest vocabulary of vectorized
operations, so a tape of ``Var`` nodes with hand-written vector-Jacobian
products covers everything the optimizer needs. Gradients are validated
against central finite differences in the test suite.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

ArrayLike = "np.ndarray | float | Var"


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """Node in the differentiation tape."""

    __slots__ = ("value", "_parents", "grad")

    # Make ndarray <op> Var dispatch to our reflected operators instead of
    # numpy building an object array.
    __array_ufunc__ = None

    def __init__(self, value, parents: Sequence[tuple["Var", Callable]] = ()):
        self.value = np.asarray(value, dtype=np.float64)
        self._parents = tuple(parents)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # arithmetic -----------------------------------------------------------
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

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _binary(a, b, out_value, vjp_a, vjp_b) -> Var:
    parents = []
    if isinstance(a, Var):
        parents.append((a, vjp_a))
    if isinstance(b, Var):
        parents.append((b, vjp_b))
    return Var(out_value, parents)


def add(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    return _binary(
        a, b, av + bv,
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(g, bv.shape),
    )


def sub(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    return _binary(
        a, b, av - bv,
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(-g, bv.shape),
    )


def mul(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    return _binary(
        a, b, av * bv,
        lambda g: _unbroadcast(g * bv, av.shape),
        lambda g: _unbroadcast(g * av, bv.shape),
    )


def div(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    return _binary(
        a, b, av / bv,
        lambda g: _unbroadcast(g / bv, av.shape),
        lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape),
    )


def power(a, p: float) -> Var:
    av = value_of(a)
    out = av ** p
    return Var(out, [(as_var(a), lambda g: g * p * av ** (p - 1))] if isinstance(a, Var) else [])


def exp(a) -> Var:
    av = value_of(a)
    out = np.exp(av)
    if not isinstance(a, Var):
        return Var(out)
    return Var(out, [(a, lambda g: g * out)])


def log(a) -> Var:
    av = value_of(a)
    if not isinstance(a, Var):
        return Var(np.log(av))
    return Var(np.log(av), [(a, lambda g: g / av)])


def sqrt(a) -> Var:
    av = value_of(a)
    out = np.sqrt(av)
    if not isinstance(a, Var):
        return Var(out)
    return Var(out, [(a, lambda g: g * 0.5 / out)])


def absolute(a) -> Var:
    av = value_of(a)
    if not isinstance(a, Var):
        return Var(np.abs(av))
    s = np.sign(av)
    return Var(np.abs(av), [(a, lambda g: g * s)])


def asum(a, axis=None, keepdims=False) -> Var:
    av = value_of(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    if not isinstance(a, Var):
        return Var(out)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy() if np.ndim(g) == 0 else np.full(av.shape, g)
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis=axis)
        return np.broadcast_to(gg, av.shape).copy()

    return Var(out, [(a, vjp)])


def amean(a, axis=None, keepdims=False) -> Var:
    av = value_of(a)
    if axis is None:
        count = av.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([av.shape[ax] for ax in axes]))
    return mul(asum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def where(cond: np.ndarray, a, b) -> Var:
    """Select by a boolean array of plain values (not differentiated)."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = value_of(a), value_of(b)
    out = np.where(cond, av, bv)
    return _binary(
        a, b, out,
        lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape),
        lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape),
    )


def clip(a, lo: float, hi: float) -> Var:
    av = value_of(a)
    out = np.clip(av, lo, hi)
    if not isinstance(a, Var):
        return Var(out)
    mask = (av > lo) & (av < hi)
    return Var(out, [(a, lambda g: g * mask)])


def maximum(a, b) -> Var:
    return where(value_of(a) >= value_of(b), a, b)


def minimum(a, b) -> Var:
    return where(value_of(a) <= value_of(b), a, b)


def take(a, idx) -> Var:
    """Gather with a constant index; scatter-adds on the way back."""
    av = value_of(a)
    out = av[idx]
    if not isinstance(a, Var):
        return Var(out)

    def vjp(g):
        acc = np.zeros(av.shape, dtype=np.float64)
        np.add.at(acc, idx, g)
        return acc

    return Var(out, [(a, vjp)])


def reshape(a, shape) -> Var:
    av = value_of(a)
    out = av.reshape(shape)
    if not isinstance(a, Var):
        return Var(out)
    return Var(out, [(a, lambda g: g.reshape(av.shape))])


def expand_dims(a, axis: int) -> Var:
    av = value_of(a)
    out = np.expand_dims(av, axis)
    if not isinstance(a, Var):
        return Var(out)
    return Var(out, [(a, lambda g: np.squeeze(g, axis=axis))])


def swap_last_axes(a) -> Var:
    av = value_of(a)
    out = np.swapaxes(av, -1, -2)
    if not isinstance(a, Var):
        return Var(out)
    return Var(out, [(a, lambda g: np.swapaxes(g, -1, -2))])


def matmul(a, b) -> Var:
    """Batched matrix product; batch shapes of a and b must already match."""
    av, bv = value_of(a), value_of(b)
    out = av @ bv
    return _binary(
        a, b, out,
        lambda g: g @ np.swapaxes(bv, -1, -2),
        lambda g: np.swapaxes(av, -1, -2) @ g,
    )


def cross(a, b) -> Var:
    av, bv = value_of(a), value_of(b)
    out = np.cross(av, bv)
    return _binary(
        a, b, out,
        lambda g: _unbroadcast(np.cross(bv, g), av.shape),
        lambda g: _unbroadcast(np.cross(g, av), bv.shape),
    )


def stack(parts: Sequence, axis: int = -1) -> Var:
    values = [value_of(p) for p in parts]
    out = np.stack(values, axis=axis)
    parents = []
    for i, p in enumerate(parts):
        if isinstance(p, Var):
            parents.append((p, (lambda g, i=i: np.take(g, i, axis=axis))))
    return Var(out, parents)


def concatenate(parts: Sequence, axis: int = 0) -> Var:
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    parents = []
    offset = 0
    for p, v in zip(parts, values):
        n = v.shape[axis]
        if isinstance(p, Var):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(offset, offset + n)
            parents.append((p, (lambda g, sl=tuple(sl): g[sl])))
        offset += n
    return Var(out, parents)


def norm(a, axis=-1, keepdims=False, eps: float = 1e-30) -> Var:
    """Euclidean norm with a floor that keeps the gradient finite at zero."""
    sq = asum(mul(a, a), axis=axis, keepdims=keepdims)
    return sqrt(maximum(sq, eps))


def softmax(logits, axis: int = -1, mask: np.ndarray | None = None) -> Var:
    """Stable softmax; optional boolean mask zeroes entries before normalizing."""
    shift = value_of(logits).max(axis=axis, keepdims=True)
    e = exp(sub(logits, shift))
    if mask is not None:
        e = mul(e, mask.astype(np.float64))
    return div(e, asum(e, axis=axis, keepdims=True))


def backward(root: Var) -> None:
    """Accumulate gradients of a scalar ``root`` into every reachable Var."""
    if root.value.size != 1:
        raise ValueError("backward expects a scalar root")
    order = _topo_order(root)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node._parents:
            pg = vjp(g)
            if parent.grad is None:
                parent.grad = np.array(pg, dtype=np.float64, copy=True)
            else:
                parent.grad = parent.grad + pg


def grad(root: Var, leaves: Sequence[Var]) -> list[np.ndarray]:
    backward(root)
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value) for leaf in leaves]


def _topo_order(root: Var) -> list[Var]:
    order: list[Var] = []
    visited: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in visited:
                stack_.append((parent, False))
    return order


def jacobian(out: Var, leaves: Sequence[Var]) -> list[np.ndarray]:
    """Dense Jacobians of a vector-valued ``out`` w.r.t. each leaf.

    Returns one (out.size, leaf.size) array per leaf, reusing a single tape
    with one backward sweep per output component.
    """
    order = _topo_order(out)
    m = out.value.size
    jacs = [np.zeros((m, leaf.value.size)) for leaf in leaves]
    for comp in range(m):
        for node in order:
            node.grad = None
        seed = np.zeros(out.value.shape)
        seed.reshape(-1)[comp] = 1.0
        out.grad = seed
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node._parents:
                pg = vjp(g)
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64, copy=True)
                else:
                    parent.grad = parent.grad + pg
        for i, leaf in enumerate(leaves):
            if leaf.grad is not None:
                jacs[i][comp] = leaf.grad.reshape(-1)
    return jacs


class Adam:
    """Adaptive-moment gradient descent on a flat parameter vector."""

    def __init__(self, size: int, lr: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, gradient: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * gradient
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * gradient * gradient
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)
