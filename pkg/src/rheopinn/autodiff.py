"""Reverse-mode automatic differentiation over numpy arrays.

Every arithmetic step is recorded as a :class:`Node` in an acyclic graph
holding the 64-bit value, an operation tag, references to the parent nodes
and the local vector-Jacobian callbacks.  :func:`grad` walks the graph once
in reverse topological order and accumulates adjoints with a fixed,
deterministic summation order, so two runs over the same graph produce
bit-identical gradients.

The node values may be scalars or arrays of any shape; elementwise ops
follow numpy broadcasting (adjoints are summed back onto the parent shape).
This is enough to differentiate batched network evaluations, including
expressions that mix in forward-mode spatial jets (see ``jets``), with
respect to every trainable parameter.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Node",
    "NonFiniteError",
    "const",
    "param",
    "exp",
    "log",
    "tanh",
    "sin",
    "cos",
    "sqrt",
    "smooth_abs",
    "matmul",
    "total",
    "mean",
    "take0",
    "row0",
    "col_last",
    "grad",
    "loss_gradient",
    "replay",
]


class NonFiniteError(ArithmeticError):
    """A value that must be finite is inf or nan."""

    def __init__(self, message, point=None):
        if point is not None:
            message = f"{message} (offending point: {np.asarray(point).tolist()})"
        super().__init__(message)
        self.point = point


def _value(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Node:
    """One recorded value: op tag, parents, 64-bit value, local partials.

    ``rg`` ("reaches gradient") is true when any ancestor is a trainable
    leaf; adjoints are only propagated along rg edges.
    """

    __slots__ = ("value", "op", "parents", "aux", "rg", "_vjps")

    def __init__(self, value, op="const", parents=(), vjps=(), aux=None, rg=None):
        self.value = _value(value)
        self.op = op
        self.parents = parents
        self.aux = aux
        self._vjps = vjps
        self.rg = any(p.rg for p in parents) if rg is None else rg

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}, shape={self.value.shape})"

    # arithmetic operators; non-Node operands are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        if isinstance(exponent, Node):
            raise TypeError("only constant exponents are supported")
        return powc(self, float(exponent))


def const(x) -> Node:
    """Leaf that never receives an adjoint (data, collocation points, ...)."""
    return Node(x, op="const", rg=False)


def param(x) -> Node:
    """Trainable leaf; ``grad`` returns its adjoint."""
    return Node(x, op="param", rg=True)


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum an adjoint back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# forward semantics per op tag, used by `replay` to re-derive node values
_REPLAY: dict[str, Callable] = {}


def _replayer(tag):
    def deco(fn):
        _REPLAY[tag] = fn
        return fn

    return deco


_REPLAY["const"] = _REPLAY["param"] = None


@_replayer("add")
def _f_add(v, aux):
    return v[0] + v[1]


def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    return Node(
        a.value + b.value,
        "add",
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(g, b.value.shape)),
    )


@_replayer("sub")
def _f_sub(v, aux):
    return v[0] - v[1]


def sub(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    return Node(
        a.value - b.value,
        "sub",
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(-g, b.value.shape)),
    )


@_replayer("mul")
def _f_mul(v, aux):
    return v[0] * v[1]


def mul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    return Node(
        a.value * b.value,
        "mul",
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
    )


@_replayer("div")
def _f_div(v, aux):
    return v[0] / v[1]


def div(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    out = Node(a.value / b.value, "div", (a, b))
    out._vjps = (
        lambda g: _unbroadcast(g / b.value, a.value.shape),
        lambda g: _unbroadcast(-g * out.value / b.value, b.value.shape),
    )
    return out


@_replayer("neg")
def _f_neg(v, aux):
    return -v[0]


def neg(a) -> Node:
    a = _wrap(a)
    return Node(-a.value, "neg", (a,), (lambda g: -g,))


@_replayer("pow")
def _f_pow(v, aux):
    return v[0] ** aux


def powc(a, c: float) -> Node:
    a = _wrap(a)
    return Node(
        a.value**c,
        "pow",
        (a,),
        (lambda g: g * (c * a.value ** (c - 1.0)),),
        aux=c,
    )


@_replayer("exp")
def _f_exp(v, aux):
    return np.exp(v[0])


def exp(a) -> Node:
    a = _wrap(a)
    out = Node(np.exp(a.value), "exp", (a,))
    out._vjps = (lambda g: g * out.value,)
    return out


@_replayer("log")
def _f_log(v, aux):
    return np.log(v[0])


def log(a) -> Node:
    a = _wrap(a)
    return Node(np.log(a.value), "log", (a,), (lambda g: g / a.value,))


@_replayer("tanh")
def _f_tanh(v, aux):
    return np.tanh(v[0])


def tanh(a) -> Node:
    a = _wrap(a)
    out = Node(np.tanh(a.value), "tanh", (a,))
    out._vjps = (lambda g: g * (1.0 - out.value * out.value),)
    return out


@_replayer("sin")
def _f_sin(v, aux):
    return np.sin(v[0])


def sin(a) -> Node:
    a = _wrap(a)
    return Node(np.sin(a.value), "sin", (a,), (lambda g: g * np.cos(a.value),))


@_replayer("cos")
def _f_cos(v, aux):
    return np.cos(v[0])


def cos(a) -> Node:
    a = _wrap(a)
    return Node(np.cos(a.value), "cos", (a,), (lambda g: -g * np.sin(a.value),))


@_replayer("sqrt")
def _f_sqrt(v, aux):
    return np.sqrt(v[0])


def sqrt(a) -> Node:
    a = _wrap(a)
    out = Node(np.sqrt(a.value), "sqrt", (a,))
    out._vjps = (lambda g: g / (2.0 * out.value),)
    return out


def smooth_abs(a, delta: float = 1e-8) -> Node:
    """C-infinity stand-in for |x|: sqrt(x^2 + delta^2)."""
    a = _wrap(a)
    return sqrt(a * a + delta * delta)


@_replayer("matmul")
def _f_matmul(v, aux):
    return np.matmul(v[0], v[1])


def matmul(a, b) -> Node:
    """a @ b with b a 2-D matrix; a may carry leading batch axes."""
    a, b = _wrap(a), _wrap(b)
    if b.value.ndim != 2:
        raise ValueError("matmul right operand must be 2-D")
    k = b.value.shape[0]

    def vjp_a(g):
        return np.matmul(g, b.value.T)

    def vjp_b(g):
        return a.value.reshape(-1, k).T @ g.reshape(-1, b.value.shape[1])

    return Node(np.matmul(a.value, b.value), "matmul", (a, b), (vjp_a, vjp_b))


@_replayer("total")
def _f_total(v, aux):
    return np.sum(v[0])


def total(a) -> Node:
    """Sum of all entries (scalar Node)."""
    a = _wrap(a)
    return Node(np.sum(a.value), "total", (a,), (lambda g: np.broadcast_to(g, a.value.shape),))


def mean(a) -> Node:
    a = _wrap(a)
    return total(a) * (1.0 / a.value.size)


@_replayer("take0")
def _f_take0(v, aux):
    return v[0][aux]


def take0(a, idx) -> Node:
    """Gather rows along axis 0 (duplicate indices allowed)."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        buf = np.zeros_like(a.value)
        np.add.at(buf, idx, g)
        return buf

    return Node(a.value[idx], "take0", (a,), (vjp,), aux=idx)


@_replayer("row0")
def _f_row0(v, aux):
    return v[0][aux]


def row0(a, i: int) -> Node:
    """Single row along axis 0 (drops the axis)."""
    a = _wrap(a)

    def vjp(g):
        buf = np.zeros_like(a.value)
        buf[i] = g
        return buf

    return Node(a.value[i], "row0", (a,), (vjp,), aux=i)


@_replayer("col_last")
def _f_col_last(v, aux):
    return v[0][..., aux]


def col_last(a, j: int) -> Node:
    """Single column along the last axis (drops the axis)."""
    a = _wrap(a)

    def vjp(g):
        buf = np.zeros_like(a.value)
        buf[..., j] = g
        return buf

    return Node(a.value[..., j], "col_last", (a,), (vjp,), aux=j)


def _topo(root: Node) -> list[Node]:
    """Post-order over the rg-subgraph: parents precede children."""
    if not root.rg:
        return []
    order: list[Node] = []
    seen = {id(root)}
    stack: list[tuple[Node, any]] = [(root, iter(root.parents))]
    while stack:
        node, it = stack[-1]
        p = next(it, None)
        if p is None:
            order.append(node)
            stack.pop()
        elif p.rg and id(p) not in seen:
            seen.add(id(p))
            stack.append((p, iter(p.parents)))
    return order


def grad(loss: Node, wrt: Sequence[Node]) -> list[np.ndarray]:
    """Gradient of a scalar loss with respect to the given leaves.

    Leaves the loss does not depend on get an exact zero array.  Raises
    ``NonFiniteError`` when the loss value itself is not finite.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    if not np.isfinite(loss.value):
        raise NonFiniteError(f"loss is non-finite: {float(loss.value)}")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topo(loss)):
        g = adjoint.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node._vjps):
            if not parent.rg:
                continue
            contrib = vjp(g)
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + contrib
            else:
                adjoint[key] = contrib
    return [adjoint.get(id(w), np.zeros_like(w.value)) for w in wrt]


# spec-level name for the same operation
loss_gradient = grad


def replay(node: Node) -> np.ndarray:
    """Recompute a node's value from its record; must match bitwise."""
    order: list[Node] = []
    seen = {id(node)}
    stack: list[tuple[Node, any]] = [(node, iter(node.parents))]
    while stack:
        cur, it = stack[-1]
        p = next(it, None)
        if p is None:
            order.append(cur)
            stack.pop()
        elif id(p) not in seen:
            seen.add(id(p))
            stack.append((p, iter(p.parents)))
    values: dict[int, np.ndarray] = {}
    for cur in order:
        fn = _REPLAY[cur.op]
        if fn is None:  # leaf
            values[id(cur)] = cur.value
        else:
            values[id(cur)] = fn([values[id(p)] for p in cur.parents], cur.aux)
    return values[id(node)]
