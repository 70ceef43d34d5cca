"""Forward-mode spatial jets: batched value, gradient and second derivatives.

A :class:`SpatialJet` carries, for a batch of N points, the value of a
scalar field together with its first derivatives with respect to each
spatial input and the second-derivative entries the flow residuals need
(diagonal terms first, then the cross terms).  Jet components are autodiff
``Node`` objects, so any expression built from them remains differentiable
with respect to the network parameters that produced the jet.

:class:`FirstJet` is the first-order view (value + gradient) closed under
smooth arithmetic; it is what the constitutive law and the stress
divergence are written in, so viscosity gets its spatial derivatives by
the chain rule rather than a frozen-coefficient shortcut.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node

__all__ = ["SpatialJet", "FirstJet", "HESS_PAIRS", "coordinate_jets"]

# second-derivative entry order per spatial dimension: diagonal then cross
HESS_PAIRS = {
    1: ((0, 0),),
    2: ((0, 0), (1, 1), (0, 1)),
    3: ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)),
}

_PAIR_POS = {
    d: {(i, j): k for k, (i, j) in enumerate(pairs)} | {(j, i): k for k, (i, j) in enumerate(pairs)}
    for d, pairs in HESS_PAIRS.items()
}

# row i of the symmetric Hessian as indices into the packed entry list
_HESS_ROWS = {
    d: tuple(np.array([_PAIR_POS[d][(i, j)] for j in range(d)]) for i in range(d))
    for d in HESS_PAIRS
}


def _wrap(x):
    return x if isinstance(x, Node) else ad.const(x)


class FirstJet:
    """Value and spatial gradient of a batched scalar field.

    ``f`` has shape (N,), ``g`` has shape (d, N).  Node and plain-number
    operands are treated as spatially constant coefficients (they may still
    carry parameter gradients).
    """

    __slots__ = ("f", "g")

    def __init__(self, f, g):
        self.f = _wrap(f)
        self.g = _wrap(g)

    @property
    def dim(self) -> int:
        return self.g.value.shape[0]

    def dx(self, i: int) -> Node:
        """Spatial derivative along axis i."""
        return ad.row0(self.g, i)

    def __add__(self, other):
        if isinstance(other, FirstJet):
            return FirstJet(self.f + other.f, self.g + other.g)
        return FirstJet(self.f + other, self.g)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, FirstJet):
            return FirstJet(self.f - other.f, self.g - other.g)
        return FirstJet(self.f - other, self.g)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return FirstJet(-self.f, -self.g)

    def __mul__(self, other):
        if isinstance(other, FirstJet):
            return FirstJet(self.f * other.f, self.g * other.f + other.g * self.f)
        return FirstJet(self.f * other, self.g * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, FirstJet):
            w = self.f / other.f
            return FirstJet(w, (self.g - other.g * w) / other.f)
        return FirstJet(self.f / other, self.g / other)

    def __rtruediv__(self, other):
        # other is spatially constant: d(c/f) = -c g / f^2
        w = _wrap(other) / self.f
        return FirstJet(w, -self.g * w / self.f)

    def __pow__(self, c):
        c = float(c)
        return FirstJet(self.f**c, self.g * (c * self.f ** (c - 1.0)))

    def exp(self) -> "FirstJet":
        e = ad.exp(self.f)
        return FirstJet(e, self.g * e)

    def sqrt(self) -> "FirstJet":
        s = ad.sqrt(self.f)
        return FirstJet(s, self.g / (2.0 * s))


class SpatialJet:
    """Second-order jet of a batched scalar field.

    ``value``: (N,), ``grad``: (d, N), ``hess``: (m, N) packed per
    HESS_PAIRS[d].  Supports the ring operations (add/sub/mul and scalar
    multiples), which is enough to compose polynomial test fields exactly.
    """

    __slots__ = ("value", "grad", "hess", "dim")

    def __init__(self, value, grad, hess, dim: int):
        self.value = _wrap(value)
        self.grad = _wrap(grad)
        self.hess = _wrap(hess)
        self.dim = dim
        if self.grad.value.shape[0] != dim or self.hess.value.shape[0] != len(HESS_PAIRS[dim]):
            raise ValueError("jet component shapes inconsistent with dimension")

    @classmethod
    def from_arrays(cls, value, grad, hess) -> "SpatialJet":
        grad = np.asarray(grad, dtype=np.float64)
        return cls(np.asarray(value, np.float64), grad, np.asarray(hess, np.float64), grad.shape[0])

    def first(self) -> FirstJet:
        return FirstJet(self.value, self.grad)

    def d(self, i: int) -> FirstJet:
        """First-order jet of the i-th spatial derivative (uses the Hessian)."""
        return FirstJet(ad.row0(self.grad, i), ad.take0(self.hess, _HESS_ROWS[self.dim][i]))

    def dx(self, i: int) -> Node:
        return ad.row0(self.grad, i)

    def d2(self, i: int, j: int) -> Node:
        return ad.row0(self.hess, _PAIR_POS[self.dim][(i, j)])

    def values(self) -> np.ndarray:
        return self.value.value

    def grad_values(self) -> np.ndarray:
        return self.grad.value

    def hess_values(self) -> np.ndarray:
        return self.hess.value

    def __add__(self, other):
        if isinstance(other, SpatialJet):
            return SpatialJet(
                self.value + other.value, self.grad + other.grad, self.hess + other.hess, self.dim
            )
        return SpatialJet(self.value + other, self.grad, self.hess, self.dim)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, SpatialJet):
            return SpatialJet(
                self.value - other.value, self.grad - other.grad, self.hess - other.hess, self.dim
            )
        return SpatialJet(self.value - other, self.grad, self.hess, self.dim)

    def __neg__(self):
        return SpatialJet(-self.value, -self.grad, -self.hess, self.dim)

    def __mul__(self, other):
        if not isinstance(other, SpatialJet):
            return SpatialJet(self.value * other, self.grad * other, self.hess * other, self.dim)
        pairs = HESS_PAIRS[self.dim]
        idx_i = np.array([i for i, _ in pairs])
        idx_j = np.array([j for _, j in pairs])
        ga_i, ga_j = ad.take0(self.grad, idx_i), ad.take0(self.grad, idx_j)
        gb_i, gb_j = ad.take0(other.grad, idx_i), ad.take0(other.grad, idx_j)
        hess = (
            self.hess * other.value
            + other.hess * self.value
            + ga_i * gb_j
            + ga_j * gb_i
        )
        return SpatialJet(
            self.value * other.value,
            self.grad * other.value + other.grad * self.value,
            hess,
            self.dim,
        )

    __rmul__ = __mul__


def coordinate_jets(points: np.ndarray) -> list[SpatialJet]:
    """Exact jets of the coordinate functions at the given (N, d) points."""
    pts = np.asarray(points, dtype=np.float64)
    n, d = pts.shape
    m = len(HESS_PAIRS[d])
    out = []
    for i in range(d):
        g = np.zeros((d, n))
        g[i] = 1.0
        out.append(SpatialJet.from_arrays(pts[:, i], g, np.zeros((m, n))))
    return out
