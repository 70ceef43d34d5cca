"""Feedforward networks with fixed, locally adaptive and Kronecker-mixture
activations, plus the slope-recovery regularizer and checkpoint IO.

The hidden rule is NN^l = act(W^l NN^{l-1} + b^l) for l < D and an affine
output layer.  Activation families:

* ``Tanh``            -- plain tanh.
* ``LayerAdaptive``   -- tanh(n * a_l * z) with one trainable slope a_l per
                         hidden layer (layer-wise locally adaptive, L-LAAF
                         in the adaptive-activation literature).
* ``NeuronAdaptive``  -- tanh(n * a_li * z_i) with one slope per neuron
                         (N-LAAF).
* ``KroneckerMix``    -- sum_k alpha_k^l sigma_k(omega_k^l z), the Kronecker
                         network family.  With tanh for every branch this is
                         the "KNN-tanh" variant; with sinusoidal higher
                         branches sigma_k(x) = n sin((k-1) n x) it is the
                         Rowdy variant.

Slopes are initialized so n*a = 1 and Kronecker coefficients at
alpha = omega = 1, which makes the adaptive nets reduce to the plain tanh
net at initialization (K = 1) exactly.

Forward evaluation propagates second-order spatial jets: the value, spatial
gradient and packed Hessian rows travel through each layer together, and
every component is an autodiff Node, so one reverse sweep over the jet
computation yields gradients with respect to all trainable parameters.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, NonFiniteError
from .jets import HESS_PAIRS, SpatialJet

__all__ = [
    "Tanh",
    "LayerAdaptive",
    "NeuronAdaptive",
    "KroneckerMix",
    "family_from_tag",
    "PinnNetwork",
    "evaluate_jet",
]


@dataclass(frozen=True)
class Tanh:
    """Fixed tanh activation."""

    tag = "fixed"

    def n_params(self, width: int) -> int:
        return 0


@dataclass(frozen=True)
class LayerAdaptive:
    """One trainable slope per hidden layer, pre-scaled by ``scale``."""

    scale: float = 1.0
    tag = "llaaf"

    def n_params(self, width: int) -> int:
        return 1


@dataclass(frozen=True)
class NeuronAdaptive:
    """One trainable slope per hidden neuron, pre-scaled by ``scale``."""

    scale: float = 1.0
    tag = "nlaaf"

    def n_params(self, width: int) -> int:
        return width


@dataclass(frozen=True)
class KroneckerMix:
    """Trainable mixture sum_k alpha_k sigma_k(omega_k z) of K branches.

    ``sinusoidal=False``: every branch is tanh.  ``sinusoidal=True``: branch
    1 is tanh and branch k >= 2 is n*sin((k-1)*n*x) with n = ``scale``.
    """

    terms: int = 2
    sinusoidal: bool = False
    scale: float = 1.0

    def __post_init__(self):
        if self.terms < 1:
            raise ValueError("KroneckerMix needs at least one branch")

    @property
    def tag(self) -> str:
        return "rowdy" if self.sinusoidal else "kron-tanh"

    def n_params(self, width: int) -> int:
        return 2 * self.terms


def family_from_tag(tag: str, terms: int = 2, scale: float = 1.0):
    if tag == "fixed":
        return Tanh()
    if tag == "llaaf":
        return LayerAdaptive(scale)
    if tag == "nlaaf":
        return NeuronAdaptive(scale)
    if tag == "kron-tanh":
        return KroneckerMix(terms, sinusoidal=False, scale=scale)
    if tag == "rowdy":
        return KroneckerMix(terms, sinusoidal=True, scale=scale)
    raise ValueError(f"unknown activation family tag: {tag!r}")


def _tanh_branch(V, G, H):
    t = ad.tanh(V)
    d1 = 1.0 - t * t
    if G is None:
        return t, None, None
    d2 = -2.0 * t * d1
    return t, d1, d2


def _sin_branch(V, G, H, n: float, c: float):
    # sigma(x) = n sin(c x); sigma' = n c cos(c x); sigma'' = -c^2 sigma
    s = n * ad.sin(c * V)
    d1 = (n * c) * ad.cos(c * V)
    if G is None:
        return s, None, None
    return s, d1, (-c * c) * s


def _apply_sigma(branch, V, G, H, pair_i, pair_j):
    val, d1, d2 = branch(V, G, H)
    if G is None:
        return val, None, None
    Gout = d1 * G
    Hout = d1 * H + d2 * (ad.take0(G, pair_i) * ad.take0(G, pair_j))
    return val, Gout, Hout


CHECKPOINT_MAGIC = "rheopinn-checkpoint v1"


class PinnNetwork:
    """MLP with an activation family and optional named trainable scalars.

    ``widths`` includes input and output sizes.  ``extra_scalars`` hold
    problem-level trainable parameters (e.g. log-transformed dimensionless
    groups in the identification setting); they ride along in the trainable
    list and the checkpoint.  ``input_center``/``input_halfwidth`` apply a
    fixed affine map of the raw coordinates onto O(1) inputs before the
    first layer (identity by default); spatial derivatives are taken with
    respect to the raw coordinates.
    """

    def __init__(self, widths, family, weights, biases, act_params, extra_scalars,
                 input_center=None, input_halfwidth=None, seed=None):
        self.widths = tuple(int(w) for w in widths)
        self.family = family
        self.weights = weights
        self.biases = biases
        self.act_params = act_params
        self.extra_scalars = dict(extra_scalars)
        d0 = self.widths[0]
        self.input_center = np.zeros(d0) if input_center is None else np.asarray(input_center, float)
        self.input_halfwidth = (
            np.ones(d0) if input_halfwidth is None else np.asarray(input_halfwidth, float)
        )
        self.seed = seed

    # -- construction --------------------------------------------------

    @classmethod
    def init(cls, widths, family=Tanh(), seed=0, extra_scalars=None, input_bounds=None):
        """Glorot-uniform weights, zero biases, family-prescribed slopes."""
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError(f"invalid layer widths: {widths}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(ad.param(rng.uniform(-limit, limit, size=(fan_in, fan_out))))
            biases.append(ad.param(np.zeros(fan_out)))
        act_params = []
        for w in widths[1:-1]:
            if isinstance(family, LayerAdaptive):
                act_params.append([ad.param(1.0 / family.scale)])
            elif isinstance(family, NeuronAdaptive):
                act_params.append([ad.param(np.full(w, 1.0 / family.scale))])
            elif isinstance(family, KroneckerMix):
                act_params.append([ad.param(np.ones(family.terms)),
                                   ad.param(np.ones(family.terms))])
            else:
                act_params.append([])
        extras = {name: ad.param(float(v)) for name, v in (extra_scalars or {}).items()}
        center = halfwidth = None
        if input_bounds is not None:
            lo, hi = (np.asarray(b, float) for b in input_bounds)
            center, halfwidth = (lo + hi) / 2.0, (hi - lo) / 2.0
        return cls(widths, family, weights, biases, act_params, extras, center, halfwidth, seed)

    # -- parameter bookkeeping ------------------------------------------

    @property
    def trainable(self) -> list[Node]:
        """Flat parameter list in checkpoint order: (W, b) per layer, then
        activation parameters per hidden layer, then extra scalars by name."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        for group in self.act_params:
            out.extend(group)
        for name in sorted(self.extra_scalars):
            out.append(self.extra_scalars[name])
        return out

    @property
    def param_count(self) -> int:
        return sum(p.value.size for p in self.trainable)

    def set_values(self, values):
        for p, v in zip(self.trainable, values):
            p.value = np.asarray(v, dtype=np.float64).reshape(p.value.shape)

    def get_values(self):
        return [p.value.copy() for p in self.trainable]

    # -- forward evaluation ----------------------------------------------

    def _input_jet(self, points, order):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.widths[0]:
            raise ValueError(
                f"points shape {pts.shape} does not match input width {self.widths[0]}"
            )
        n, d = pts.shape
        V = ad.const((pts - self.input_center) / self.input_halfwidth)
        if order == 0:
            return V, None, None
        g0 = np.zeros((d, n, d))
        for i in range(d):
            g0[i, :, i] = 1.0 / self.input_halfwidth[i]
        m = len(HESS_PAIRS[d])
        return V, ad.const(g0), ad.const(np.zeros((m, n, d)))

    def _activate(self, V, G, H, layer):
        d = self.widths[0]
        pairs = HESS_PAIRS[d]
        pair_i = np.array([i for i, _ in pairs])
        pair_j = np.array([j for _, j in pairs])
        fam = self.family
        if isinstance(fam, Tanh):
            return _apply_sigma(_tanh_branch, V, G, H, pair_i, pair_j)
        if isinstance(fam, (LayerAdaptive, NeuronAdaptive)):
            s = fam.scale * self.act_params[layer][0]
            Vs = V * s
            Gs = None if G is None else G * s
            Hs = None if H is None else H * s
            return _apply_sigma(_tanh_branch, Vs, Gs, Hs, pair_i, pair_j)
        alpha, omega = self.act_params[layer]
        acc = None
        for k in range(fam.terms):
            a_k = ad.row0(alpha, k)
            w_k = ad.row0(omega, k)
            Vs = V * w_k
            Gs = None if G is None else G * w_k
            Hs = None if H is None else H * w_k
            if fam.sinusoidal and k > 0:
                branch = lambda v, g, h: _sin_branch(v, g, h, fam.scale, k * fam.scale)
            else:
                branch = _tanh_branch
            val, Gb, Hb = _apply_sigma(branch, Vs, Gs, Hs, pair_i, pair_j)
            term = (a_k * val, None if G is None else a_k * Gb,
                    None if H is None else a_k * Hb)
            if acc is None:
                acc = term
            else:
                acc = tuple(
                    x if y is None else x + y for x, y in zip(acc, term)
                ) if G is not None else (acc[0] + term[0], None, None)
        return acc

    def _propagate(self, points, order):
        V, G, H = self._input_jet(points, order)
        last = len(self.weights) - 1
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            V = ad.matmul(V, W) + b
            if G is not None:
                G = ad.matmul(G, W)
                H = ad.matmul(H, W)
            if layer < last:
                V, G, H = self._activate(V, G, H, layer)
        return V, G, H

    def forward_nodes(self, points) -> list[Node]:
        """Per-output value Nodes of shape (N,)."""
        V, _, _ = self._propagate(points, order=0)
        return [ad.col_last(V, j) for j in range(self.widths[-1])]

    def forward_jets(self, points) -> list[SpatialJet]:
        """Per-output second-order spatial jets."""
        V, G, H = self._propagate(points, order=2)
        d = self.widths[0]
        return [
            SpatialJet(ad.col_last(V, j), ad.col_last(G, j), ad.col_last(H, j), d)
            for j in range(self.widths[-1])
        ]

    def predict(self, points) -> np.ndarray:
        """Plain (N, outputs) value array."""
        V, _, _ = self._propagate(points, order=0)
        return V.value

    def scalar(self, name: str) -> Node:
        return self.extra_scalars[name]

    # -- slope recovery ---------------------------------------------------

    def slope_recovery(self) -> Node:
        """Regularizer 1 / mean_l exp(a_l) rewarding larger slopes.

        The mean runs over the hidden layers (slopes exist only there); for
        neuron-wise slopes the layer exponent uses the neuron average.
        Families without slopes contribute 0.
        """
        fam = self.family
        if not isinstance(fam, (LayerAdaptive, NeuronAdaptive)):
            return ad.const(0.0)
        terms = None
        for group in self.act_params:
            a = group[0]
            e = ad.exp(a) if isinstance(fam, LayerAdaptive) else ad.exp(ad.mean(a))
            terms = e if terms is None else terms + e
        return float(len(self.act_params)) / terms

    # -- checkpoint io -----------------------------------------------------

    def save(self, path, stage: int = 0):
        """Textual header + flat little-endian float64 parameter block."""
        fam = self.family
        header = [
            CHECKPOINT_MAGIC,
            "widths " + " ".join(str(w) for w in self.widths),
            f"family {fam.tag}",
            f"kron_terms {fam.terms if isinstance(fam, KroneckerMix) else 0}",
            f"act_scale {getattr(fam, 'scale', 1.0)!r}",
            f"seed {self.seed if self.seed is not None else -1}",
            f"stage {stage}",
            "input_center " + " ".join(repr(v) for v in self.input_center),
            "input_halfwidth " + " ".join(repr(v) for v in self.input_halfwidth),
            "extra_scalars " + (" ".join(sorted(self.extra_scalars)) or "-"),
        ]
        flat = np.concatenate([p.value.ravel() for p in self.trainable]) if self.trainable else np.zeros(0)
        body = flat.astype("<f8").tobytes()
        header.append(f"params {flat.size}")
        header.append("data")
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            fh.write(body)

    @classmethod
    def load(cls, path) -> tuple["PinnNetwork", int]:
        """Returns (network, stage index)."""
        with open(path, "rb") as fh:
            raw = fh.read()
        head, _, rest = raw.partition(b"data\n")
        lines = head.decode("ascii").strip().splitlines()
        if lines[0] != CHECKPOINT_MAGIC:
            raise ValueError(f"not a rheopinn checkpoint: {path}")
        kv = {}
        for line in lines[1:]:
            key, _, val = line.partition(" ")
            kv[key] = val
        widths = tuple(int(w) for w in kv["widths"].split())
        family = family_from_tag(kv["family"], int(kv["kron_terms"]) or 2, float(kv["act_scale"]))
        seed = int(kv["seed"])
        names = [] if kv["extra_scalars"] == "-" else kv["extra_scalars"].split()
        net = cls.init(
            widths,
            family,
            seed=max(seed, 0),
            extra_scalars={n: 0.0 for n in names},
            input_bounds=None,
        )
        net.seed = seed if seed >= 0 else None
        net.input_center = np.array([float(v) for v in kv["input_center"].split()])
        net.input_halfwidth = np.array([float(v) for v in kv["input_halfwidth"].split()])
        count = int(kv["params"])
        flat = np.frombuffer(rest, dtype="<f8", count=count)
        if flat.size != count or count != net.param_count:
            raise ValueError("checkpoint parameter block does not match header")
        offset = 0
        for p in net.trainable:
            p.value = flat[offset : offset + p.value.size].reshape(p.value.shape).copy()
            offset += p.value.size
        return net, int(kv["stage"])


def evaluate_jet(network: PinnNetwork, points) -> list[SpatialJet]:
    """Jets of every network output at the given points, checked finite."""
    jets = network.forward_jets(points)
    pts = np.asarray(points, dtype=np.float64)
    for jet in jets:
        for comp in (jet.value.value, jet.grad.value, jet.hess.value):
            bad = ~np.isfinite(comp)
            if bad.any():
                idx = int(np.argwhere(bad.reshape(bad.shape[0], -1).any(axis=0) if comp.ndim > 1 else bad)[0])
                raise NonFiniteError("non-finite jet component", point=pts[idx])
    return jets
