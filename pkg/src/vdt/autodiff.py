"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Var`` records its primal value plus a closure that scatters the output
gradient back onto its parents; ``backward()`` replays those closures once
in reverse topological order. Only the handful of operations the backbones
need are provided, all on 0-, 1- or 2-D arrays, which keeps broadcasting
rules easy to invert. Graphs are rebuilt per forward pass (define-by-run),
so the recorded nodes double as the gradient tape.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """One node of the tape: value, accumulated gradient, backward closure."""

    __slots__ = ("value", "grad", "track", "_parents", "_bw")

    def __init__(self, value, parents=(), bw=None, track=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._bw = bw
        if track is None:
            track = any(p.track for p in parents)
        self.track = track

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def _acc(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Accumulate d(self)/d(leaf) into every tracked leaf's .grad."""
        if self.value.ndim != 0:
            raise ValueError("backward() starts from a scalar loss")
        order = _toposort(self)
        self._acc(np.ones_like(self.value))
        for node in reversed(order):
            if node._bw is not None:
                node._bw(node.grad)

    # -- operator sugar -----------------------------------------------------

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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("divide via reciprocal() for Var denominators")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)


def param(value) -> Var:
    """A trainable leaf: gradients flow into it."""
    return Var(np.array(value, dtype=np.float64), track=True)


def constant(value) -> Var:
    return Var(value, track=False)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else constant(x)


def _toposort(root: Var) -> list:
    """Iterative post-order over tracked nodes (graphs outgrow the recursion limit)."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.track:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


# -- arithmetic --------------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value + b.value, (a, b))

    def bw(g):
        if a.track:
            a._acc(_unbroadcast(g, a.value.shape))
        if b.track:
            b._acc(_unbroadcast(g, b.value.shape))

    out._bw = bw
    return out


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value - b.value, (a, b))

    def bw(g):
        if a.track:
            a._acc(_unbroadcast(g, a.value.shape))
        if b.track:
            b._acc(-_unbroadcast(g, b.value.shape))

    out._bw = bw
    return out


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value * b.value, (a, b))

    def bw(g):
        if a.track:
            a._acc(_unbroadcast(g * b.value, a.value.shape))
        if b.track:
            b._acc(_unbroadcast(g * a.value, b.value.shape))

    out._bw = bw
    return out


def reciprocal(a) -> Var:
    a = as_var(a)
    inv = 1.0 / a.value
    out = Var(inv, (a,))

    def bw(g):
        if a.track:
            a._acc(_unbroadcast(-g * inv * inv, a.value.shape))

    out._bw = bw
    return out


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value @ b.value, (a, b))

    def bw(g):
        if a.track:
            a._acc(g @ b.value.T)
        if b.track:
            b._acc(a.value.T @ g)

    out._bw = bw
    return out


def square(a) -> Var:
    a = as_var(a)
    out = Var(a.value * a.value, (a,))

    def bw(g):
        if a.track:
            a._acc(g * 2.0 * a.value)

    out._bw = bw
    return out


# -- pointwise nonlinearities ------------------------------------------------


def tanh(a) -> Var:
    a = as_var(a)
    t = np.tanh(a.value)
    out = Var(t, (a,))

    def bw(g):
        if a.track:
            a._acc(g * (1.0 - t * t))

    out._bw = bw
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable in both tails
    pos = x >= 0
    z = np.empty_like(x)
    z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    z[~pos] = ex / (1.0 + ex)
    return z


def sigmoid(a) -> Var:
    a = as_var(a)
    s = _sigmoid(a.value)
    out = Var(s, (a,))

    def bw(g):
        if a.track:
            a._acc(g * s * (1.0 - s))

    out._bw = bw
    return out


def relu(a) -> Var:
    a = as_var(a)
    out = Var(np.maximum(a.value, 0.0), (a,))

    def bw(g):
        if a.track:
            a._acc(g * (a.value > 0.0))

    out._bw = bw
    return out


def softplus(a) -> Var:
    a = as_var(a)
    out = Var(np.logaddexp(0.0, a.value), (a,))

    def bw(g):
        if a.track:
            a._acc(g * _sigmoid(a.value))

    out._bw = bw
    return out


def exp(a) -> Var:
    a = as_var(a)
    e = np.exp(a.value)
    out = Var(e, (a,))

    def bw(g):
        if a.track:
            a._acc(g * e)

    out._bw = bw
    return out


def log(a) -> Var:
    a = as_var(a)
    out = Var(np.log(a.value), (a,))

    def bw(g):
        if a.track:
            a._acc(g / a.value)

    out._bw = bw
    return out


# -- reductions and shape ops -------------------------------------------------


def vsum(a) -> Var:
    a = as_var(a)
    out = Var(a.value.sum(), (a,))

    def bw(g):
        if a.track:
            a._acc(np.full(a.value.shape, float(g)))

    out._bw = bw
    return out


def mean(a) -> Var:
    a = as_var(a)
    n = a.value.size
    out = Var(a.value.mean(), (a,))

    def bw(g):
        if a.track:
            a._acc(np.full(a.value.shape, float(g) / n))

    out._bw = bw
    return out


def mean_squared_error(pred, target) -> Var:
    """Mean over every element of (pred - target)^2."""
    return mean(square(sub(pred, target)))


def concat(parts, axis=0) -> Var:
    parts = [as_var(p) for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts))
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.track:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._acc(g[tuple(idx)])

    out._bw = bw
    return out


def narrow(a, axis, start, size) -> Var:
    """Contiguous slice [start, start+size) along `axis`."""
    a = as_var(a)
    idx = [slice(None)] * a.value.ndim
    idx[axis] = slice(start, start + size)
    idx = tuple(idx)
    out = Var(a.value[idx], (a,))

    def bw(g):
        if a.track:
            full = np.zeros_like(a.value)
            full[idx] = g
            a._acc(full)

    out._bw = bw
    return out


def reshape(a, shape) -> Var:
    a = as_var(a)
    out = Var(a.value.reshape(shape), (a,))

    def bw(g):
        if a.track:
            a._acc(g.reshape(a.value.shape))

    out._bw = bw
    return out


# -- gradient verification -----------------------------------------------------

REL_ERR_FLOOR = 1e-5  # denominator floor so finite-difference noise on near-zero
# gradients does not masquerade as a failure


class GradCheckReport:
    """Per-parameter max relative error between analytic and numeric gradients."""

    def __init__(self, errors: dict, tolerance: float):
        self.errors = errors
        self.tolerance = tolerance
        self.passed = all(e < tolerance for e in errors.values())

    def worst(self) -> float:
        return max(self.errors.values())

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return f"GradCheckReport({status}, worst={self.worst():.3e}, tol={self.tolerance:g})"


def numeric_gradients(loss_fn, params: dict, h: float = 1e-6) -> dict:
    """Central-difference gradients of loss_fn() wrt each named parameter."""
    grads = {}
    for name, p in params.items():
        flat = p.value.reshape(-1)
        g = np.empty_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn().item()
            flat[i] = keep - h
            down = loss_fn().item()
            flat[i] = keep
            g[i] = (up - down) / (2.0 * h)
        grads[name] = g.reshape(p.value.shape)
    return grads


def grad_check(loss_fn, params: dict, tolerance: float = 1e-4, h: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn must rebuild the graph (and reuse any random draws) on every
    call; params maps names to the trainable leaves it closes over.
    """
    if not params:
        raise ValueError("need at least one trainable parameter")
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.value)) for k, p in params.items()}
    numeric = numeric_gradients(loss_fn, params, h=h)
    errors = {}
    for name in params:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_ERR_FLOOR)
        errors[name] = float(np.max(np.abs(a - n) / denom))
    for p in params.values():
        p.grad = None
    return GradCheckReport(errors, tolerance)
