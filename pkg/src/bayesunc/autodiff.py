"""Tape-based reverse-mode automatic differentiation over float64 arrays.

A :class:`Graph` records every primitive application in an append-only list,
so inputs always precede outputs and backpropagation is a single reverse
sweep. Graphs are cheap and meant to be rebuilt for every training step.

Broadcasting is limited to a leading batch axis: a binary op accepts operands
of equal shape, or one operand whose shape equals the other's shape without
its first axis (a bias row added to a batch, say), or a 0-d scalar.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with a primitive's shape rule."""


class DomainError(ValueError):
    """An operand lies outside a primitive's domain (e.g. log of 0)."""


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or infinity where finite values are required."""


def as_tensor(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _broadcast_rule(op: str, a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if b == () or (len(a) >= 1 and a[1:] == b):
        return a
    if a == () or (len(b) >= 1 and b[1:] == a):
        return b
    raise ShapeError(f"{op}: incompatible shapes {a} and {b}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    return grad.sum(axis=0)


def _reduce_axis(x: np.ndarray, axis: int | None) -> int | None:
    if axis is None:
        return None
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"reduction axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def _fwd_logsumexp(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    # rows that are entirely -inf would give nan after the shift
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True)))[..., 0]


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def _check_matmul(a: tuple, b: tuple) -> None:
    if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
        raise ShapeError(f"matmul: incompatible shapes {a} and {b}")


def _check_log(x: np.ndarray) -> None:
    if np.any(x <= 0):
        raise DomainError(f"log: non-positive input (min {x.min()!r})")


def _check_unary_ndim(op: str, x: np.ndarray, ndim: int) -> None:
    if x.ndim < ndim:
        raise ShapeError(f"{op}: needs at least {ndim} axes, got shape {x.shape}")


@dataclass(frozen=True)
class Primitive:
    """Forward value and vector-Jacobian product for one operation."""

    name: str
    arity: int
    forward: Callable[..., np.ndarray]
    # vjp(grad_out, out, *inputs, **attrs) -> one gradient per input
    vjp: Callable[..., tuple]
    check: Callable[..., None] | None = None


def _sum_vjp(g, out, x, axis=None):
    if axis is None:
        return (np.broadcast_to(g, x.shape).copy(),)
    return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)


def _mean_vjp(g, out, x, axis=None):
    n = x.size if axis is None else x.shape[axis]
    (full,) = _sum_vjp(g, out, x, axis)
    return (full / n,)


def _check_reduce(x, axis=None):
    _reduce_axis(x, axis)


PRIMITIVES: dict[str, Primitive] = {
    p.name: p
    for p in [
        Primitive(
            "matmul", 2,
            lambda a, b: a @ b,
            lambda g, out, a, b: (g @ b.T, a.T @ g),
            lambda a, b: _check_matmul(a.shape, b.shape),
        ),
        Primitive(
            "add", 2,
            lambda a, b: a + b,
            lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
            lambda a, b: _broadcast_rule("add", a.shape, b.shape) and None,
        ),
        Primitive(
            "mul", 2,
            lambda a, b: a * b,
            lambda g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
            lambda a, b: _broadcast_rule("mul", a.shape, b.shape) and None,
        ),
        Primitive("neg", 1, lambda x: -x, lambda g, out, x: (-g,)),
        Primitive("exp", 1, np.exp, lambda g, out, x: (g * out,)),
        Primitive("log", 1, np.log, lambda g, out, x: (g / x,), _check_log),
        Primitive("relu", 1, lambda x: np.maximum(x, 0.0), lambda g, out, x: (g * (x > 0),)),
        Primitive("square", 1, np.square, lambda g, out, x: (2.0 * x * g,)),
        # sign(0) == 0, so the subgradient at the kink is 0
        Primitive("abs", 1, np.abs, lambda g, out, x: (g * np.sign(x),)),
        Primitive(
            "sum", 1,
            lambda x, axis=None: np.sum(x, axis=axis),
            _sum_vjp, _check_reduce,
        ),
        Primitive(
            "mean", 1,
            lambda x, axis=None: np.mean(x, axis=axis),
            _mean_vjp, _check_reduce,
        ),
        Primitive(
            "logsumexp", 1,
            _fwd_logsumexp,
            lambda g, out, x: (np.expand_dims(g, -1) * _softmax(x),),
            lambda x: _check_unary_ndim("logsumexp", x, 1),
        ),
        Primitive(
            "transpose", 1,
            lambda x: x.T,
            lambda g, out, x: (g.T,),
            lambda x: _check_unary_ndim("transpose", x, 2),
        ),
    ]
}


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------


class Node:
    """One recorded value in a :class:`Graph`. Supports arithmetic operators."""

    __slots__ = ("graph", "id", "op", "inputs", "value", "attrs", "trainable", "name")
    __array_priority__ = 1000  # make ndarray <op> Node defer to Node

    def __init__(self, graph, id, op, inputs, value, attrs, trainable=False, name=None):
        self.graph = graph
        self.id = id
        self.op = op
        self.inputs = inputs
        self.value = value
        self.attrs = attrs
        self.trainable = trainable
        self.name = name

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Node({self.id}, {label}, shape={self.shape})"

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def _lift(self, other) -> "Node":
        return other if isinstance(other, Node) else self.graph.constant(other)

    def __add__(self, other):
        return self.graph.apply("add", self, self._lift(other))

    def __radd__(self, other):
        return self.graph.apply("add", self._lift(other), self)

    def __sub__(self, other):
        return self.graph.apply("add", self, -self._lift(other))

    def __rsub__(self, other):
        return self.graph.apply("add", self._lift(other), -self)

    def __mul__(self, other):
        return self.graph.apply("mul", self, self._lift(other))

    def __rmul__(self, other):
        return self.graph.apply("mul", self._lift(other), self)

    def __neg__(self):
        return self.graph.apply("neg", self)

    def __matmul__(self, other):
        return self.graph.apply("matmul", self, self._lift(other))

    def __rmatmul__(self, other):
        return self.graph.apply("matmul", self._lift(other), self)

    def exp(self):
        return self.graph.apply("exp", self)

    def log(self):
        return self.graph.apply("log", self)

    def relu(self):
        return self.graph.apply("relu", self)

    def square(self):
        return self.graph.apply("square", self)

    def abs(self):
        return self.graph.apply("abs", self)

    def sum(self, axis: int | None = None):
        return self.graph.apply("sum", self, axis=axis)

    def mean(self, axis: int | None = None):
        return self.graph.apply("mean", self, axis=axis)

    def logsumexp(self):
        return self.graph.apply("logsumexp", self)

    @property
    def T(self):
        return self.graph.apply("transpose", self)


@dataclass
class Graph:
    """Append-only tape of primitive applications.

    ``check_finite`` rejects NaN/inf outputs as soon as they are produced; it
    can be switched off for graphs that deliberately carry infinities.
    """

    nodes: list[Node] = field(default_factory=list)
    check_finite: bool = True

    def _append(self, op, inputs, value, attrs, trainable=False, name=None) -> Node:
        node = Node(self, len(self.nodes), op, inputs, value, attrs, trainable, name)
        self.nodes.append(node)
        return node

    def constant(self, value, name: str | None = None) -> Node:
        return self._append("const", (), as_tensor(value), {}, name=name)

    def parameter(self, value, name: str | None = None) -> Node:
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"parameter {name or len(self.nodes)} has non-finite entries")
        return self._append("param", (), value, {}, trainable=True, name=name)

    def apply(self, op: str, *inputs: Node, **attrs) -> Node:
        try:
            prim = PRIMITIVES[op]
        except KeyError:
            raise ValueError(f"unknown primitive {op!r}") from None
        if len(inputs) != prim.arity:
            raise ValueError(f"{op} takes {prim.arity} inputs, got {len(inputs)}")
        for node in inputs:
            if not isinstance(node, Node) or node.graph is not self:
                raise ValueError(f"{op}: inputs must be nodes of this graph")
        values = [node.value for node in inputs]
        if prim.check is not None:
            try:
                prim.check(*values, **attrs)
            except ShapeError as err:
                shapes = ", ".join(str(v.shape) for v in values)
                raise ShapeError(f"{err} [op={op}, shapes=({shapes})]") from None
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = np.asarray(prim.forward(*values, **attrs), dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{op}: produced non-finite output (node {len(self.nodes)})")
        return self._append(op, tuple(inputs), out, attrs)

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Gradients of a scalar ``loss`` for every trainable parameter node."""
        if loss.graph is not self:
            raise ValueError("loss node belongs to another graph")
        if loss.value.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        grads: list[np.ndarray | None] = [None] * (loss.id + 1)
        grads[loss.id] = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads[node.id]
            if g is None or not node.inputs:
                continue
            prim = PRIMITIVES[node.op]
            in_values = [x.value for x in node.inputs]
            for x, gx in zip(node.inputs, prim.vjp(g, node.value, *in_values, **node.attrs)):
                gx = np.asarray(gx, dtype=np.float64).reshape(x.shape)
                grads[x.id] = gx if grads[x.id] is None else grads[x.id] + gx
        out = {}
        for node in self.nodes:
            if node.trainable:
                g = grads[node.id] if node.id <= loss.id else None
                out[node.id] = np.zeros_like(node.value) if g is None else g
        return out

    def parameters(self) -> list[Node]:
        return [n for n in self.nodes if n.trainable]


GradientMap = dict  # parameter node id -> gradient array


def apply_primitive(op_id: str, inputs: Sequence[Node], graph: Graph, **attrs) -> Node:
    return graph.apply(op_id, *inputs, **attrs)


def backward(graph: Graph, loss: Node) -> GradientMap:
    return graph.backward(loss)


def grad_check(
    fn: Callable[..., Node],
    point: np.ndarray | Sequence[np.ndarray],
    step: float = 1e-6,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn(graph, *nodes)`` must build a scalar loss from parameter nodes created
    at ``point`` (a single array, or a sequence of arrays for several
    arguments). The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    single = isinstance(point, np.ndarray) or np.isscalar(point)
    points = [as_tensor(point)] if single else [as_tensor(p) for p in point]

    def value_at(arrays) -> float:
        g = Graph()
        out = fn(g, *[g.parameter(a) for a in arrays])
        v = float(out.value)
        if not np.isfinite(v):
            raise NonFiniteError("grad_check: function value is not finite")
        return v

    g = Graph()
    nodes = [g.parameter(p) for p in points]
    loss = fn(g, *nodes)
    if not np.isfinite(loss.value).all():
        raise NonFiniteError("grad_check: function value is not finite")
    grads = g.backward(loss)

    worst = 0.0
    for k, p in enumerate(points):
        analytic = grads[nodes[k].id]
        for idx in np.ndindex(p.shape):
            shifted = [q.copy() for q in points]
            shifted[k][idx] = p[idx] + step
            up = value_at(shifted)
            shifted[k][idx] = p[idx] - step
            down = value_at(shifted)
            numeric = (up - down) / (2.0 * step)
            err = abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx]))
            worst = max(worst, err)
    return worst
