"""Minimal array-level reverse-mode differentiation.

Each :class:`Var` wraps a float64 array and remembers how it was produced.
Calling :func:`backward` on a scalar output accumulates ``.grad`` on every
upstream ``Var``. Nodes are visited in reverse topological order, so gradient
accumulation happens in a fixed, run-to-run deterministic order.
"""
from __future__ import annotations

import numpy as np

from . import discrepancy as _disc
from . import kernels


class Var:
    __slots__ = ("value", "grad", "_parents", "name")

    def __init__(self, value, parents=(), name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        # sequence of (parent, fn mapping upstream grad -> parent's grad contribution)
        self._parents = parents
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var({self.name or 'anon'}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -1.0 * other if isinstance(other, Var) else -other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    return Var(
        a.value + b.value,
        ((a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))),
    )


def mul(a: Var, c) -> Var:
    """Product with a constant scalar or an elementwise Var."""
    if isinstance(c, Var):
        return Var(
            a.value * c.value,
            (
                (a, lambda g: _unbroadcast(g * c.value, a.shape)),
                (c, lambda g: _unbroadcast(g * a.value, c.shape)),
            ),
        )
    c = float(c)
    return Var(a.value * c, ((a, lambda g: g * c),))


def matmul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    return Var(a.value @ b.value, ((a, lambda g: g @ b.value.T), (b, lambda g: a.value.T @ g)))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return Var(np.where(mask, a.value, 0.0), ((a, lambda g: g * mask),))


def total(a: Var) -> Var:
    return Var(a.value.sum(), ((a, lambda g: np.full(a.shape, float(g))),))


def dense(x: Var, W: Var, b: Var) -> Var:
    """Affine map ``x @ W + b`` as one node."""
    return Var(
        x.value @ W.value + b.value,
        (
            (x, lambda g: g @ W.value.T),
            (W, lambda g: x.value.T @ g),
            (b, lambda g: g.sum(axis=0)),
        ),
    )


def segment_max(h: Var, offsets: np.ndarray) -> Var:
    vals, arg = kernels.segment_max(h.value, offsets)
    n = h.shape[0]
    return Var(vals, ((h, lambda g: kernels.segment_max_backward(g, arg, n)),))


def cross_entropy(logits: Var, labels: np.ndarray) -> Var:
    """Mean negative log-softmax at ``labels``, max-shifted for stability."""
    z = logits.value
    shifted = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(z))
    value = float(np.mean(logsumexp - shifted[rows, labels]))

    def back(g):
        p = np.exp(shifted - logsumexp[:, None])
        p[rows, labels] -= 1.0
        return float(g) * p / len(z)

    return Var(value, ((logits, back),))


def mk_mmd2(xs: Var, xt: Var, family) -> Var:
    value, gs, gt = _disc.mk_mmd2_grad(xs.value, xt.value, family)
    return Var(value, ((xs, lambda g: float(g) * gs), (xt, lambda g: float(g) * gt)))


def coral(xs: Var, xt: Var) -> Var:
    value, gs, gt = _disc.coral_grad(xs.value, xt.value)
    return Var(value, ((xs, lambda g: float(g) * gs), (xt, lambda g: float(g) * gt)))


def _toposort(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Var) -> None:
    """Populate ``.grad`` on every Var reachable from scalar ``root``."""
    if root.value.size != 1:
        raise ValueError("backward() needs a scalar output")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, fn in node._parents:
            contrib = fn(node.grad)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib
