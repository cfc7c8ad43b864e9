"""Reverse-mode automatic differentiation on a dynamic tape.

Nodes hold numpy arrays (scalars are 0-d arrays), so a single node can be a
whole batch of latent vectors; the graph stays small even for batched
training. Every primitive records its value and one vector-Jacobian product
per operand. backward() walks the tape once in reverse.

The primitive set is intentionally small and closed: anything differentiable
the rest of the package needs is composed from what is defined here, and a
finite-difference checker (gradient_check) validates any composition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Tape:
    """Append-only record of operations; index order is evaluation order."""

    __slots__ = ("_values", "_parents")

    def __init__(self) -> None:
        self._values: list[np.ndarray] = []
        self._parents: list[tuple] = []

    def _append(self, value: np.ndarray, parents: tuple) -> "Var":
        self._values.append(value)
        self._parents.append(parents)
        return Var(self, len(self._values) - 1)

    def const(self, value) -> "Var":
        """A node with no parents; gradients never flow into it."""
        return self._append(np.asarray(value, dtype=float), ())

    def var(self, value) -> "Var":
        """A leaf node; identical to const except in intent (you will ask
        for its gradient)."""
        return self.const(value)

    def __len__(self) -> int:
        return len(self._values)


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape._values[self.index]

    @property
    def shape(self):
        return self.value.shape

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
        return neg(self)

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={self.value.shape})"


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over broadcast dimensions back to the operand shape."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("operands live on different tapes")
        return x
    return tape.const(x)


def _pair(a, b) -> tuple[Var, Var]:
    if isinstance(a, Var):
        return a, _lift(a.tape, b)
    if isinstance(b, Var):
        return _lift(b.tape, a), b
    raise TypeError("at least one operand must be a Var")


# ---------------------------------------------------------------- primitives

def add(a, b) -> Var:
    a, b = _pair(a, b)
    return a.tape._append(a.value + b.value, (
        (a.index, lambda g, s=a.value.shape: _unbroadcast(g, s)),
        (b.index, lambda g, s=b.value.shape: _unbroadcast(g, s)),
    ))


def sub(a, b) -> Var:
    a, b = _pair(a, b)
    return a.tape._append(a.value - b.value, (
        (a.index, lambda g, s=a.value.shape: _unbroadcast(g, s)),
        (b.index, lambda g, s=b.value.shape: _unbroadcast(-g, s)),
    ))


def mul(a, b) -> Var:
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    return a.tape._append(av * bv, (
        (a.index, lambda g: _unbroadcast(g * bv, av.shape)),
        (b.index, lambda g: _unbroadcast(g * av, bv.shape)),
    ))


def div(a, b) -> Var:
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise ZeroDivisionError("division by zero on tape")
    val = av / bv
    return a.tape._append(val, (
        (a.index, lambda g: _unbroadcast(g / bv, av.shape)),
        (b.index, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)),
    ))


def neg(a) -> Var:
    return a.tape._append(-a.value, ((a.index, lambda g: -g),))


def sin(a) -> Var:
    av = a.value
    return a.tape._append(np.sin(av), ((a.index, lambda g: g * np.cos(av)),))


def cos(a) -> Var:
    av = a.value
    return a.tape._append(np.cos(av), ((a.index, lambda g: -g * np.sin(av)),))


def sqrt(a) -> Var:
    av = a.value
    if np.any(av < 0.0):
        raise ValueError("sqrt of a negative value on tape")
    val = np.sqrt(av)
    if np.any(val == 0.0):
        raise ValueError("sqrt at zero has no derivative; smooth it first")
    return a.tape._append(val, ((a.index, lambda g: g * 0.5 / val),))


def abs_smooth(a, eps: float = 1e-9) -> Var:
    """sqrt(x^2 + eps^2): |x| with the kink rounded off."""
    av = a.value
    val = np.hypot(av, eps)
    return a.tape._append(val, ((a.index, lambda g: g * av / val),))


def hypot(a, b) -> Var:
    """sqrt(a^2 + b^2) elementwise. The origin is a genuine kink; both
    partials are settled to zero there, matching the estimator Jacobians."""
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    val = np.hypot(av, bv)
    inv = np.divide(1.0, val, out=np.zeros_like(val), where=val != 0.0)

    def back(g, num, s):
        return _unbroadcast(np.asarray(g) * num * inv, s)

    return a.tape._append(val, (
        (a.index, lambda g: back(g, av, av.shape)),
        (b.index, lambda g: back(g, bv, bv.shape)),
    ))


def tanh(a) -> Var:
    val = np.tanh(a.value)
    return a.tape._append(val, ((a.index, lambda g: g * (1.0 - val * val)),))


def exp(a) -> Var:
    val = np.exp(a.value)
    return a.tape._append(val, ((a.index, lambda g: g * val),))


def softplus(a) -> Var:
    """log(1 + e^x) in the overflow-safe logaddexp form."""
    av = a.value
    val = np.logaddexp(0.0, av)
    # derivative is the logistic sigmoid, written via tanh for stability
    sig = 0.5 * (1.0 + np.tanh(0.5 * av))
    return a.tape._append(val, ((a.index, lambda g: g * sig),))


def relu_plus(a) -> Var:
    """max(x, 0); the subgradient at exactly zero is taken as zero."""
    av = a.value
    mask = (av > 0.0).astype(float)
    return a.tape._append(av * mask, ((a.index, lambda g: g * mask),))


def select(cond, a, b) -> Var:
    """Elementwise where(cond, a, b); cond is a plain boolean array."""
    a, b = _pair(a, b)
    cond = np.asarray(cond, dtype=bool)
    val = np.where(cond, a.value, b.value)
    return a.tape._append(val, (
        (a.index, lambda g: _unbroadcast(np.where(cond, g, 0.0), a.value.shape)),
        (b.index, lambda g: _unbroadcast(np.where(cond, 0.0, g), b.value.shape)),
    ))


def vsum(a, axis=None) -> Var:
    av = a.value
    val = np.sum(av, axis=axis)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape)
        return np.broadcast_to(np.expand_dims(g, axis), av.shape)

    return a.tape._append(np.asarray(val, dtype=float), ((a.index, vjp),))


def dot(a, b) -> Var:
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    if av.ndim != 1 or bv.ndim != 1:
        raise ValueError("dot expects 1-d operands; use matmul for matrices")
    return a.tape._append(np.asarray(av @ bv), (
        (a.index, lambda g: g * bv),
        (b.index, lambda g: g * av),
    ))


def matmul(a, b) -> Var:
    """a @ b for 2-d a with 2-d or 1-d b."""
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    val = av @ bv
    if bv.ndim == 1:
        parents = (
            (a.index, lambda g: np.outer(g, bv)),
            (b.index, lambda g: av.T @ g),
        )
    else:
        parents = (
            (a.index, lambda g: g @ bv.T),
            (b.index, lambda g: av.T @ g),
        )
    return a.tape._append(val, parents)


def gather_rows(a, idx) -> Var:
    idx = np.asarray(idx, dtype=int)
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return a.tape._append(av[idx], ((a.index, vjp),))


def gather_cols(a, idx) -> Var:
    idx = np.asarray(idx, dtype=int)
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out.T, idx, np.asarray(g).T)
        return out

    return a.tape._append(av[:, idx], ((a.index, vjp),))


def segment_sum_rows(a, idx, num: int) -> Var:
    """Row k of the result is the sum of input rows whose idx equals k."""
    idx = np.asarray(idx, dtype=int)
    av = a.value
    out = np.zeros((num,) + av.shape[1:])
    np.add.at(out, idx, av)
    return a.tape._append(out, ((a.index, lambda g: g[idx]),))


def segment_sum_cols(a, idx, num: int) -> Var:
    idx = np.asarray(idx, dtype=int)
    av = a.value
    out = np.zeros(av.shape[:1] + (num,))
    np.add.at(out.T, idx, av.T)
    return a.tape._append(out, ((a.index, lambda g: np.asarray(g)[:, idx]),))


def concat(parts, axis: int = 1) -> Var:
    if not parts:
        raise ValueError("concat of nothing")
    tape = parts[0].tape
    parts = [_lift(tape, p) for p in parts]
    vals = [p.value for p in parts]
    val = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
        def vjp(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return np.asarray(g)[tuple(sl)]
        parents.append((p.index, vjp))
    return tape._append(val, tuple(parents))


def column(a, j: int) -> Var:
    """Column j of a 2-d node, as a 1-d node."""
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        out[:, j] = g
        return out

    return a.tape._append(av[:, j].copy(), ((a.index, vjp),))


def reshape(a, shape) -> Var:
    av = a.value
    return a.tape._append(
        av.reshape(shape), ((a.index, lambda g: np.asarray(g).reshape(av.shape)),)
    )


def maximum(a, b) -> Var:
    """Elementwise max, composed from primitives (a + relu_plus(b - a))."""
    a, b = _pair(a, b)
    return add(a, relu_plus(sub(b, a)))


# ------------------------------------------------------------------ backward

class Gradients:
    """Gradient of one scalar output with respect to any tape node."""

    def __init__(self, tape: Tape, grads: list):
        self._tape = tape
        self._grads = grads

    def wrt(self, var: Var) -> np.ndarray:
        if var.tape is not self._tape:
            raise ValueError("variable lives on a different tape")
        g = self._grads[var.index] if var.index < len(self._grads) else None
        if g is None:
            return np.zeros_like(var.value)
        return g


def backward(out: Var) -> Gradients:
    """Accumulate d(out)/d(node) for every node reaching the scalar out."""
    if out.value.shape != ():
        raise ValueError("backward expects a scalar output node")
    tape = out.tape
    grads: list = [None] * (out.index + 1)
    grads[out.index] = np.ones(())
    for idx in range(out.index, -1, -1):
        g = grads[idx]
        if g is None:
            continue
        for parent_idx, vjp in tape._parents[idx]:
            contrib = vjp(g)
            if grads[parent_idx] is None:
                grads[parent_idx] = contrib
            else:
                grads[parent_idx] = grads[parent_idx] + contrib
    return Gradients(tape, grads)


# ------------------------------------------------------------ sanity checker

@dataclass
class GradientCheckReport:
    max_rel_error: float
    suspect_coords: list
    analytic: np.ndarray
    numeric: np.ndarray


def gradient_check(f, x0, eps: float = 1e-6) -> GradientCheckReport:
    """Compare reverse-mode and central-difference gradients of f.

    f maps (tape, Var) to a scalar Var. Coordinates where the second
    difference blows up (a kink under the probe, e.g. |x| near 0) are
    reported in suspect_coords and excluded from max_rel_error rather than
    failed, since no finite-difference answer is trustworthy there.
    """
    x0 = np.asarray(x0, dtype=float)
    tape = Tape()
    xv = tape.var(x0)
    out = f(tape, xv)
    if out.value.shape != ():
        raise ValueError("gradient_check needs a scalar-valued f")
    analytic = np.asarray(backward(out).wrt(xv), dtype=float)
    f0 = float(out.value)

    def value_at(x):
        t = Tape()
        return float(f(t, t.var(x)).value)

    numeric = np.zeros_like(x0)
    suspects = []
    scale = max(1.0, abs(f0))
    flat = x0.ravel()
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = eps
        fp = value_at((flat + e).reshape(x0.shape))
        fm = value_at((flat - e).reshape(x0.shape))
        numeric.ravel()[k] = (fp - fm) / (2.0 * eps)
        if abs(fp - 2.0 * f0 + fm) / (eps * scale) > 1e-2:
            suspects.append(k)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    rel.ravel()[suspects] = 0.0
    return GradientCheckReport(
        max_rel_error=float(np.max(rel)) if rel.size else 0.0,
        suspect_coords=suspects,
        analytic=analytic,
        numeric=numeric,
    )
