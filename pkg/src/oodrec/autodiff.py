"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Just enough machinery for the losses in this package: elementwise ops,
matmul, reductions, softmax/sigmoid/tanh/relu, slicing and concatenation,
a matrix-exponential-trace primitive, and a gradient reversal primitive.
All values are float64; graphs are built per forward pass and freed after
backward().
"""

from __future__ import annotations

import numpy as np

from .numerics import expm


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
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
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("value", "grad", "requires_grad", "_parents")

    def __init__(self, value, requires_grad: bool = False, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p, _ in parents)
        self._parents = tuple((p, fn) for p, fn in parents if p.requires_grad)

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.grad is None:
                continue
            for parent, vjp in node._parents:
                contrib = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = contrib.copy()
                else:
                    parent.grad = parent.grad + contrib

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        other = as_var(other)
        return mul(self, power(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def parameter(value) -> Var:
    return Var(np.array(value, dtype=np.float64), requires_grad=True)


# -- arithmetic -------------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value + b.value
    return Var(out, parents=(
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    ))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value * b.value
    return Var(out, parents=(
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    ))


def power(a, p: float) -> Var:
    a = as_var(a)
    out = a.value**p
    return Var(out, parents=((a, lambda g: g * p * a.value ** (p - 1.0)),))


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value @ b.value
    return Var(out, parents=(
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    ))


def transpose(a) -> Var:
    a = as_var(a)
    return Var(a.value.T, parents=((a, lambda g: g.T),))


def take(a, key) -> Var:
    """Slice or fancy-index; backward scatter-adds into the source."""
    a = as_var(a)
    out = a.value[key]

    def vjp(g):
        full = np.zeros_like(a.value)
        np.add.at(full, key, g)
        return full

    return Var(out, parents=((a, vjp),))


def concat(parts, axis: int = 0) -> Var:
    parts = [as_var(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for i, p in enumerate(parts):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g, lo=lo, hi=hi):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]

        parents.append((p, vjp))
    return Var(out, parents=tuple(parents))


def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.value.shape
    return Var(a.value.reshape(shape), parents=((a, lambda g: g.reshape(old)),))


# -- reductions -------------------------------------------------------------


def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).astype(np.float64)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.value.shape).astype(np.float64)

    return Var(out, parents=((a, vjp),))


def vmean(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    if axis is None:
        n = a.value.size
    else:
        n = a.value.shape[axis]
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- elementwise nonlinearities ---------------------------------------------


def relu(a) -> Var:
    a = as_var(a)
    mask = (a.value > 0).astype(np.float64)
    return Var(a.value * mask, parents=((a, lambda g: g * mask),))


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.value)
    return Var(out, parents=((a, lambda g: g * (1.0 - out**2)),))


def sigmoid(a) -> Var:
    a = as_var(a)
    out = np.where(a.value >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.value))),
                   np.exp(-np.abs(a.value)) / (1.0 + np.exp(-np.abs(a.value))))
    return Var(out, parents=((a, lambda g: g * out * (1.0 - out)),))


def vexp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return Var(out, parents=((a, lambda g: g * out),))


def vlog(a) -> Var:
    a = as_var(a)
    return Var(np.log(a.value), parents=((a, lambda g: g / a.value),))


def vabs(a) -> Var:
    a = as_var(a)
    sign = np.sign(a.value)
    return Var(np.abs(a.value), parents=((a, lambda g: g * sign),))


def vsqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.value)
    return Var(out, parents=((a, lambda g: g * 0.5 / out),))


def clip(a, lo: float, hi: float) -> Var:
    """Clamp values; gradient is zero outside the interval."""
    a = as_var(a)
    mask = ((a.value >= lo) & (a.value <= hi)).astype(np.float64)
    return Var(np.clip(a.value, lo, hi), parents=((a, lambda g: g * mask),))


def softmax(a, axis: int = -1) -> Var:
    a = as_var(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return Var(out, parents=((a, vjp),))


# -- special primitives ------------------------------------------------------


def expm_trace(a) -> Var:
    """Tr(e^A) with gradient (e^A)^T."""
    a = as_var(a)
    ea = expm(a.value)
    return Var(np.trace(ea), parents=((a, lambda g: g * ea.T),))


def grad_reverse(a, lam: float = 1.0) -> Var:
    """Identity forward; backward multiplies the gradient by -lam."""
    a = as_var(a)
    return Var(a.value.copy(), parents=((a, lambda g: -lam * g),))


# -- parameters and optimizer ------------------------------------------------


class ParamSet(dict):
    """Named collection of trainable Vars."""

    def add(self, name: str, value) -> Var:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        v = parameter(value)
        self[name] = v
        return v

    def zero_grad(self) -> None:
        for v in self.values():
            v.grad = None

    def l2_norm(self) -> Var:
        total = None
        for v in self.values():
            sq = vsum(mul(v, v))
            total = sq if total is None else add(total, sq)
        if total is None:
            return Var(0.0)
        return vsqrt(total)

    def state(self) -> dict:
        return {k: v.value.copy() for k, v in self.items()}

    def load_state(self, state: dict) -> None:
        for k, v in self.items():
            v.value = np.array(state[k], dtype=np.float64)


class Adam:
    """Adaptive moment estimation over a ParamSet."""

    def __init__(self, params: ParamSet, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(v.value) for k, v in params.items()}
        self._v = {k: np.zeros_like(v.value) for k, v in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m = self._m[k]
            v = self._v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.value = p.value - lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
