"""Tape-based reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` is an append-only list of nodes. Every primitive evaluates
its forward value eagerly, records a closure computing the adjoints of its
inputs, and returns a :class:`Var` handle. :func:`backward` walks the tape
once in reverse insertion order.

Example::

    tape = Tape()
    x = tape.param(np.array(3.0))
    loss = square(x)
    grads = backward(tape, loss)
    grads[x]   # -> array(6.)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class Var:
    """Handle to one node on a tape."""

    __slots__ = ("tape", "id")
    __array_priority__ = 100

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.id]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


_Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Single-owner record of a forward computation."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.values: list[np.ndarray] = []
        self.inputs: list[tuple[int, ...]] = []
        self.rules: list[Optional[_Backward]] = []
        self.ops: list[str] = []
        self.leaves: list[Var] = []
        self._params: dict[int, Var] = {}

    def __len__(self):
        return len(self.values)

    def _push(self, op: str, value, inputs: tuple[int, ...], rule: Optional[_Backward]) -> Var:
        node = len(self.values)
        assert all(i < node for i in inputs)
        self.values.append(value)
        self.inputs.append(inputs)
        self.rules.append(rule)
        self.ops.append(op)
        return Var(self, node)

    def param(self, array) -> Var:
        """Leaf for a trainable array; repeated calls with one array share a node."""
        key = id(array)
        var = self._params.get(key)
        if var is None:
            value = np.asarray(array, dtype=self.dtype)
            var = self._push("leaf", value, (), None)
            self._params[key] = var
            self.leaves.append(var)
        return var

    def const(self, array) -> Var:
        return self._push("const", np.asarray(array, dtype=self.dtype), (), None)

    def lookup(self, array) -> Optional[Var]:
        return self._params.get(id(array))


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("Vars from different tapes cannot be combined")
        return x
    return tape.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one argument must be a Var")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from exc


# -- primitives ---------------------------------------------------------------

def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    _broadcast_shape(av, bv)
    sa, sb = av.shape, bv.shape
    return tape._push("add", av + bv, (a.id, b.id),
                      lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    _broadcast_shape(av, bv)
    sa, sb = av.shape, bv.shape
    return tape._push("sub", av - bv, (a.id, b.id),
                      lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Var:
    """Elementwise product with numpy broadcasting."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    _broadcast_shape(av, bv)
    return tape._push("mul", av * bv, (a.id, b.id),
                      lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def matmul(a, b) -> Var:
    """Product of two 2-D arrays."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"shape mismatch in matmul: {av.shape} @ {bv.shape}")
    return tape._push("matmul", av @ bv, (a.id, b.id), lambda g: (g @ bv.T, av.T @ g))


def sin(x: Var) -> Var:
    xv = x.value
    return x.tape._push("sin", np.sin(xv), (x.id,), lambda g: (g * np.cos(xv),))


def relu(x: Var) -> Var:
    xv = x.value
    mask = xv > 0
    return x.tape._push("relu", np.where(mask, xv, 0).astype(xv.dtype), (x.id,),
                        lambda g: (g * mask,))


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return x.tape._push("tanh", y, (x.id,), lambda g: (g * (1.0 - y * y),))


def square(x: Var) -> Var:
    xv = x.value
    return x.tape._push("square", xv * xv, (x.id,), lambda g: (2.0 * g * xv,))


def scale(x: Var, c: float) -> Var:
    c = x.tape.dtype.type(c)
    return x.tape._push("scale", x.value * c, (x.id,), lambda g: (g * c,))


def sum(x: Var, axis: Optional[int] = None) -> Var:  # noqa: A001 - mirrors numpy
    xv = x.value
    shape = xv.shape
    if axis is None:
        out = np.asarray(xv.sum(), dtype=xv.dtype)
        return x.tape._push("sum", out, (x.id,), lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = axis % xv.ndim
    return x.tape._push("sum", xv.sum(axis=ax), (x.id,),
                        lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),))


def mean(x: Var) -> Var:
    n = x.value.size
    if n == 0:
        raise ValueError("mean of an empty array")
    return scale(sum(x), 1.0 / n)


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    vals = [x.value for x in xs]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise ValueError(f"shape mismatch in concat: {[v.shape for v in vals]}") from exc
    ax = axis % out.ndim
    splits = np.cumsum([v.shape[ax] for v in vals])[:-1]
    return tape._push("concat", out, tuple(x.id for x in xs),
                      lambda g: tuple(np.split(g, splits, axis=ax)))


def gather_rows(x: Var, index) -> Var:
    """Rows ``x[index]`` along axis 0; repeated indices accumulate adjoints."""
    xv = x.value
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 1:
        raise ValueError("gather_rows expects a 1-D index")

    def rule(g):
        out = np.zeros_like(xv)
        np.add.at(out, index, g)
        return (out,)

    return x.tape._push("gather_rows", xv[index], (x.id,), rule)


def add_bias(x: Var, b: Var) -> Var:
    """``x (B, d) + b (d,)`` broadcast over rows."""
    if x.value.ndim != 2 or b.value.shape != (x.value.shape[1],):
        raise ValueError(f"shape mismatch in add_bias: {x.shape} + {b.shape}")
    return add(x, b)


def reshape(x: Var, shape) -> Var:
    xv = x.value
    old = xv.shape
    try:
        out = xv.reshape(shape)
    except ValueError as exc:
        raise ValueError(f"cannot reshape {old} to {shape}") from exc
    return x.tape._push("reshape", out, (x.id,), lambda g: (g.reshape(old),))


def transpose(x: Var, axes=None) -> Var:
    xv = x.value
    axes = tuple(reversed(range(xv.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return x.tape._push("transpose", np.ascontiguousarray(xv.transpose(axes)), (x.id,),
                        lambda g: (g.transpose(inv),))


# -- reverse pass -------------------------------------------------------------

class Gradients(dict):
    """Mapping from leaf :class:`Var` to adjoint array."""

    def of(self, tape: Tape, array) -> np.ndarray:
        """Adjoint of the leaf created for ``array``; zeros if it was unused."""
        var = tape.lookup(array)
        if var is None:
            return np.zeros(np.shape(array), dtype=tape.dtype)
        return self[var]


def backward(tape: Tape, loss: Var) -> Gradients:
    """Adjoints ``d loss / d leaf`` for every leaf of ``tape``."""
    if loss.tape is not tape:
        raise ValueError("loss does not belong to this tape")
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    adj: list[Optional[np.ndarray]] = [None] * (loss.id + 1)
    adj[loss.id] = np.ones_like(loss.value)
    for node in range(loss.id, -1, -1):
        g = adj[node]
        rule = tape.rules[node]
        if g is None or rule is None:
            continue
        for src, ga in zip(tape.inputs[node], rule(g)):
            if ga is None:
                continue
            adj[src] = ga if adj[src] is None else adj[src] + ga
        adj[node] = None if tape.ops[node] not in ("leaf",) else g
    grads = Gradients()
    for leaf in tape.leaves:
        g = adj[leaf.id] if leaf.id <= loss.id else None
        grads[leaf] = np.zeros_like(leaf.value) if g is None else np.asarray(g).reshape(leaf.shape)
    return grads


# -- finite-difference check --------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: int
    worst_index: tuple[int, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(f: Callable[[Tape, list[Var]], Var], point: Sequence[np.ndarray],
               h: float = 1e-5, tol: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f`` to central differences.

    ``f(tape, leaves)`` builds the scalar on ``tape`` from leaf Vars created
    for the arrays in ``point``. The error per component is
    ``|g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|)``; the maximum is reported.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    point = [np.array(p, dtype=np.float64) for p in point]

    def value_at(arrays):
        tape = Tape(np.float64)
        return float(f(tape, [tape.param(a) for a in arrays]).value)

    tape = Tape(np.float64)
    leaves = [tape.param(a) for a in point]
    grads = backward(tape, f(tape, leaves))
    worst = (0.0, 0, ())
    for k, (arr, leaf) in enumerate(zip(point, leaves)):
        g_ad = grads[leaf]
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = value_at(point)
            arr[idx] = orig - h
            fm = value_at(point)
            arr[idx] = orig
            g_fd = (fp - fm) / (2.0 * h)
            err = abs(g_ad[idx] - g_fd) / max(1e-12, abs(g_ad[idx]) + abs(g_fd))
            if err > worst[0]:
                worst = (float(err), k, idx)
    return GradCheckReport(worst[0], worst[1], worst[2], tol)
