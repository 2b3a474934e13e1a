"""Exact input derivatives of the MLP via truncated Taylor jets.

Forward-mode jets carry directional derivatives of order <= 2 through the
network in the input variables; wrapping the jet arithmetic in tape nodes
then yields the theta-gradient of any jet component in one reverse sweep.
Jet fields are duck-typed: plain numpy arrays give fast values, tape Nodes
give gradients, with the same propagation code.

Multi-indices are 1-based: (1,) is d/dx_1, (1, 2) is d^2/dx_1 dx_2.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .autodiff import Node, Tape
from .model import MlpArchitecture, unflatten


def _act_value(v, name: str):
    if isinstance(v, Node):
        return v.sigmoid() if name == "sigmoid" else v.tanh()
    return expit(v) if name == "sigmoid" else np.tanh(v)


def _act_s1(a, name: str):
    # first derivative of the activation expressed through its output
    return a * (1.0 - a) if name == "sigmoid" else 1.0 - a * a


def _act_s2(a, s1, name: str):
    # second derivative of the activation expressed through its output
    return s1 * (1.0 - 2.0 * a) if name == "sigmoid" else -2.0 * (a * s1)


@dataclass
class Jet1:
    """First-order jet: value and one directional derivative."""

    value: object
    d1: object

    @staticmethod
    def lift(c):
        return Jet1(c, np.zeros_like(c))

    def __add__(self, other):
        return Jet1(self.value + other.value, self.d1 + other.d1)

    def __sub__(self, other):
        return Jet1(self.value - other.value, self.d1 - other.d1)

    def __mul__(self, other):
        return Jet1(self.value * other.value,
                    self.d1 * other.value + self.value * other.d1)

    def affine(self, W, b):
        return Jet1(self.value @ W.T + b, self.d1 @ W.T)

    def activate(self, name):
        a = _act_value(self.value, name)
        return Jet1(a, _act_s1(a, name) * self.d1)


@dataclass
class Jet2:
    """Second-order jet along one direction: value, d1, d2.

    Arithmetic follows the truncated Taylor algebra, e.g.
    (f*g).d2 = f.d2*g + 2*f.d1*g.d1 + f*g.d2.
    """

    value: object
    d1: object
    d2: object

    @staticmethod
    def lift(c):
        return Jet2(c, np.zeros_like(c), np.zeros_like(c))

    def __add__(self, other):
        return Jet2(self.value + other.value, self.d1 + other.d1, self.d2 + other.d2)

    def __sub__(self, other):
        return Jet2(self.value - other.value, self.d1 - other.d1, self.d2 - other.d2)

    def __mul__(self, other):
        return Jet2(
            self.value * other.value,
            self.d1 * other.value + self.value * other.d1,
            self.d2 * other.value + 2.0 * (self.d1 * other.d1) + self.value * other.d2,
        )

    def affine(self, W, b):
        return Jet2(self.value @ W.T + b, self.d1 @ W.T, self.d2 @ W.T)

    def activate(self, name):
        a = _act_value(self.value, name)
        s1 = _act_s1(a, name)
        s2 = _act_s2(a, s1, name)
        return Jet2(a, s1 * self.d1, s2 * (self.d1 * self.d1) + s1 * self.d2)


@dataclass
class CrossJet:
    """Bilinear two-direction jet carrying the mixed second derivative."""

    value: object
    da: object
    db: object
    dab: object

    @staticmethod
    def lift(c):
        z = np.zeros_like(c)
        return CrossJet(c, z, z, z)

    def __add__(self, other):
        return CrossJet(self.value + other.value, self.da + other.da,
                        self.db + other.db, self.dab + other.dab)

    def __mul__(self, other):
        return CrossJet(
            self.value * other.value,
            self.da * other.value + self.value * other.da,
            self.db * other.value + self.value * other.db,
            self.dab * other.value + self.da * other.db
            + self.db * other.da + self.value * other.dab,
        )

    def affine(self, W, b):
        return CrossJet(self.value @ W.T + b, self.da @ W.T,
                        self.db @ W.T, self.dab @ W.T)

    def activate(self, name):
        a = _act_value(self.value, name)
        s1 = _act_s1(a, name)
        s2 = _act_s2(a, s1, name)
        return CrossJet(a, s1 * self.da, s1 * self.db,
                        s2 * (self.da * self.db) + s1 * self.dab)


def check_multi_index(multi_index, input_dim: int) -> tuple[int, ...]:
    mi = tuple(int(i) for i in np.atleast_1d(multi_index))
    if len(mi) > 2:
        raise ValueError(f"unsupported derivative order {len(mi)}; only k <= 2")
    if any(i < 1 or i > input_dim for i in mi):
        raise ValueError(f"multi-index {mi} out of range 1..{input_dim}")
    return mi


def _unit_rows(mi, J):
    rows = []
    for i in mi:
        e = np.zeros((1, J))
        e[0, i - 1] = 1.0
        rows.append(e)
    return rows


def _seed_jet(X, mi):
    J = X.shape[1]
    if len(mi) == 1:
        return Jet1(X, _unit_rows(mi, J)[0])
    if mi[0] == mi[1]:
        return Jet2(X, _unit_rows(mi[:1], J)[0], np.zeros((1, J)))
    ea, eb = _unit_rows(mi, J)
    return CrossJet(X, ea, eb, np.zeros((1, J)))


def _jet_out_deriv(jet):
    if isinstance(jet, Jet1):
        return jet.d1
    if isinstance(jet, Jet2):
        return jet.d2
    return jet.dab


def jet_forward(layers, X, multi_index, activation: str):
    """Propagate the jet seeded at `multi_index` through the layers.

    Returns the full output jet; X has shape (m, J). Works unchanged for
    numpy and tape-node layer weights.
    """
    jet = _seed_jet(X, multi_index)
    for W, b in layers[:-1]:
        jet = jet.affine(W, b).activate(activation)
    W, b = layers[-1]
    return jet.affine(W, b)


def input_derivative(theta: np.ndarray, arch: MlpArchitecture, x, multi_index) -> float:
    """k-th order mixed partial of the network output in its inputs, k <= 2.

    An empty multi-index returns the plain forward value.
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != arch.input_dim:
        raise ValueError(f"expected point of dimension {arch.input_dim}, got {x.shape[1]}")
    mi = check_multi_index(multi_index, arch.input_dim)
    layers = unflatten(np.asarray(theta, dtype=np.float64), arch)
    if len(mi) == 0:
        out = mlp_value_chain(layers, x, arch.activation)[0]
        return float(np.asarray(out).reshape(()))
    jet = jet_forward(layers, x, mi, arch.activation)
    return float(np.asarray(_jet_out_deriv(jet)).reshape(()))


def mlp_forward_parts(layers, X, activation: str):
    """Value chain with hoisted transposed weights.

    Returns (out, acts, hidden_Wts, out_Wt); reusing the transposed weight
    objects keeps derivative streams off duplicate transpose nodes.
    """
    Wts = [W.T for W, _ in layers]
    A = X
    acts = []
    for (_, b), Wt in zip(layers[:-1], Wts[:-1]):
        A = _act_value(A @ Wt + b, activation)
        acts.append(A)
    out = A @ Wts[-1] + layers[-1][1]
    return out, acts, Wts[:-1], Wts[-1]


def mlp_value_chain(layers, X, activation: str):
    """Forward pass caching each hidden activation; returns (out, acts)."""
    out, acts, _, _ = mlp_forward_parts(layers, X, activation)
    return out, acts


def act_derivative_factors(acts, activation: str, order: int):
    """Per-layer activation derivative factors (s1, and s2 when order 2)."""
    s1s = [_act_s1(a, activation) for a in acts]
    s2s = ([_act_s2(a, s1, activation) for a, s1 in zip(acts, s1s)]
           if order == 2 else None)
    return s1s, s2s


def stack_seeds(multi_indices, J: int):
    """One-hot seed stacks for a batch of equal-order multi-indices.

    Returns (k, Ea, Eb) with Ea, Eb of shape (K, 1, J); Eb is Ea itself
    when every index pair is diagonal, letting callers share streams.
    """
    ks = {len(mi) for mi in multi_indices}
    if len(ks) != 1:
        raise ValueError(f"mixed derivative orders in one stack: {sorted(ks)}")
    k = ks.pop()
    K = len(multi_indices)
    Ea = np.zeros((K, 1, J))
    for row, mi in enumerate(multi_indices):
        Ea[row, 0, mi[0] - 1] = 1.0
    if k == 1:
        return 1, Ea, None
    if all(mi[0] == mi[1] for mi in multi_indices):
        return 2, Ea, Ea
    Eb = np.zeros((K, 1, J))
    for row, mi in enumerate(multi_indices):
        Eb[row, 0, mi[1] - 1] = 1.0
    return 2, Ea, Eb


def jet_stack_outputs(hidden_Wts, out_Wt, s1s, s2s, multi_indices, J: int):
    """Stacked output derivatives, one (K, m, 1) block for K multi-indices.

    Takes the cached value-chain pieces (transposed weights and the
    activation derivative factors s1, s2 per hidden layer) and pushes all
    multi-index streams through shared matmuls. Returns None when the
    requested derivative is identically zero.
    """
    k, Da, Db = stack_seeds(multi_indices, J)
    if k == 1:
        for Wt, s1 in zip(hidden_Wts, s1s):
            Da = s1 * (Da @ Wt)
        return Da @ out_Wt
    Dab = None
    last = len(hidden_Wts) - 1
    for idx, (Wt, s1, s2) in enumerate(zip(hidden_Wts, s1s, s2s)):
        Daz = Da @ Wt
        Dbz = Daz if Db is Da else Db @ Wt
        Dabz = Dab @ Wt if Dab is not None else None
        cross = s2 * (Daz * Dbz)
        Dab = cross if Dabz is None else cross + s1 * Dabz
        if idx != last:  # first-order streams are dead after the last hidden layer
            Da = s1 * Daz
            Db = Da if Dbz is Daz else s1 * Dbz
    return None if Dab is None else Dab @ out_Wt


def mlp_jet_batch(layers, X, multi_indices, activation: str):
    """Batched input derivatives sharing one value chain.

    Returns (out_value, derivs) with one entry per multi-index; an entry is
    None when the derivative is identically zero (e.g. second derivative
    of a linear model). Multi-indices must all have the same order.
    """
    J = X.shape[1]
    out, acts = mlp_value_chain(layers, X, activation)
    ks = {len(mi) for mi in multi_indices}
    if len(ks) != 1:
        raise ValueError(f"mixed derivative orders in one batch: {sorted(ks)}")
    k = ks.pop()
    s1s = [_act_s1(a, activation) for a in acts]
    s2s = [_act_s2(a, s1, activation) for a, s1 in zip(acts, s1s)] if k == 2 else None

    hidden = layers[:-1]
    W_out = layers[-1][0]
    derivs = []
    for mi in multi_indices:
        if k == 1:
            D = _unit_rows(mi, J)[0]
            for (W, _), s1 in zip(hidden, s1s):
                D = s1 * (D @ W.T)
            derivs.append(D @ W_out.T)
        elif mi[0] == mi[1]:
            D1, D2 = _unit_rows(mi[:1], J)[0], None
            for (W, _), s1, s2 in zip(hidden, s1s, s2s):
                D1z = D1 @ W.T
                D2z = D2 @ W.T if D2 is not None else None
                D2 = s2 * (D1z * D1z) if D2z is None else s2 * (D1z * D1z) + s1 * D2z
                D1 = s1 * D1z
            derivs.append(None if D2 is None else D2 @ W_out.T)
        else:
            Da, Db = _unit_rows(mi, J)
            Dab = None
            for (W, _), s1, s2 in zip(hidden, s1s, s2s):
                Daz, Dbz = Da @ W.T, Db @ W.T
                Dabz = Dab @ W.T if Dab is not None else None
                Dab = s2 * (Daz * Dbz) if Dabz is None else s2 * (Daz * Dbz) + s1 * Dabz
                Da, Db = s1 * Daz, s1 * Dbz
            derivs.append(None if Dab is None else Dab @ W_out.T)
    return out, derivs


class HovrTermResult(NamedTuple):
    value: float
    grad: np.ndarray
    kink_hit: bool


def hovr_term_grad(theta: np.ndarray, arch: MlpArchitecture, z, multi_index,
                   q: float) -> HovrTermResult:
    """|input derivative|**q at one point and its theta-gradient.

    At a kink (zero derivative with q < 1) the returned gradient is the
    zero subdifferential element and kink_hit is set.
    """
    if q <= 0:
        raise ValueError(f"q must be positive, got {q}")
    theta = np.asarray(theta, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    if z.shape[1] != arch.input_dim:
        raise ValueError(f"expected point of dimension {arch.input_dim}, got {z.shape[1]}")
    mi = check_multi_index(multi_index, arch.input_dim)

    tape = Tape()
    th = tape.leaf(theta)
    layers = unflatten(th, arch)
    if len(mi) == 0:
        d = mlp_value_chain(layers, z, arch.activation)[0]
    else:
        jet = jet_forward(layers, z, mi, arch.activation)
        d = _jet_out_deriv(jet)
    term = d.abs_pow(q).sum()
    tape.backward(term)
    grad = th.grad if th.grad is not None else np.zeros_like(theta)
    return HovrTermResult(float(term.value), np.asarray(grad, dtype=np.float64),
                          tape.kink_hit)
