"""Reverse-mode differentiation on an append-only tape of numpy values.

A Tape records every operation of a forward pass as a node holding its
value, its parent nodes, and a closure that pushes an adjoint back to the
parents. The reverse sweep visits nodes in strictly decreasing index
order, so gradients are deterministic and bit-identical across runs.

One tape per evaluation: tapes share no global state, which makes
independent evaluations safe to run in parallel threads. All values are
float64; tolerance checks at 1e-4 are not trustworthy in float32.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit


class TapeOverflowError(ArithmeticError):
    """A non-finite value appeared on the tape."""

    def __init__(self, node_index: int, stage: str):
        self.node_index = node_index
        self.stage = stage
        super().__init__(f"non-finite value at tape node {node_index} during {stage}")


def _unbroadcast(grad, shape) -> np.ndarray:
    """Sum an adjoint down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Node:
    """One tape entry: a value, its provenance, and a backward rule."""

    __slots__ = ("tape", "index", "value", "op", "parents", "grad", "_backward", "track")
    __array_ufunc__ = None  # force numpy to defer to our reflected operators

    def __init__(self, tape, index, value, op, parents, track, backward):
        self.tape = tape
        self.index = index
        self.value = value
        self.op = op
        self.parents = parents
        self.grad = None
        self.track = track
        self._backward = backward

    def __repr__(self):
        return f"Node#{self.index}[{self.op}] shape={np.shape(self.value)}"

    # -- helpers ---------------------------------------------------------

    def _wrap(self, other) -> "Node":
        return other if isinstance(other, Node) else self.tape.const(other)

    def _acc(self, g):
        self.grad = g if self.grad is None else self.grad + g

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        o = self._wrap(other)
        a_shape, b_shape = self.value.shape, o.value.shape

        def backward(g):
            if self.track:
                self._acc(_unbroadcast(g, a_shape))
            if o.track:
                o._acc(_unbroadcast(g, b_shape))

        return self.tape._record(self.value + o.value, "add", (self, o), backward)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._wrap(other)
        a_shape, b_shape = self.value.shape, o.value.shape

        def backward(g):
            if self.track:
                self._acc(_unbroadcast(g, a_shape))
            if o.track:
                o._acc(_unbroadcast(-g, b_shape))

        return self.tape._record(self.value - o.value, "sub", (self, o), backward)

    def __rsub__(self, other):
        return self._wrap(other).__sub__(self)

    def __mul__(self, other):
        o = self._wrap(other)
        a, b = self.value, o.value

        def backward(g):
            if self.track:
                self._acc(_unbroadcast(g * b, a.shape))
            if o.track:
                o._acc(_unbroadcast(g * a, b.shape))

        return self.tape._record(a * b, "mul", (self, o), backward)

    __rmul__ = __mul__

    def __neg__(self):
        def backward(g):
            self._acc(-g)

        return self.tape._record(-self.value, "neg", (self,), backward)

    def __matmul__(self, other):
        o = self._wrap(other)
        a, b = self.value, o.value

        def backward(g):
            # swapaxes (not .T) so stacked 3-D operands transpose correctly
            if self.track:
                self._acc(_unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape))
            if o.track:
                o._acc(_unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape))

        return self.tape._record(a @ b, "matmul", (self, o), backward)

    def __rmatmul__(self, other):
        return self._wrap(other).__matmul__(self)

    # -- structure -------------------------------------------------------

    @property
    def T(self):
        def backward(g):
            self._acc(g.T)

        return self.tape._record(self.value.T, "transpose", (self,), backward)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        orig = self.value.shape

        def backward(g):
            self._acc(np.reshape(g, orig))

        return self.tape._record(np.reshape(self.value, shape), "reshape", (self,), backward)

    def __getitem__(self, key):
        if not isinstance(key, slice):
            raise TypeError("tape nodes support slice indexing only")
        orig = self.value.shape

        def backward(g):
            full = np.zeros(orig)
            full[key] = g
            self._acc(full)

        return self.tape._record(self.value[key], "slice", (self,), backward)

    # -- reductions ------------------------------------------------------

    def sum(self):
        shape = self.value.shape

        def backward(g):
            self._acc(np.full(shape, g))

        return self.tape._record(np.float64(np.sum(self.value)), "sum", (self,), backward)

    def mean(self):
        shape = self.value.shape
        size = int(np.prod(shape)) if shape else 1

        def backward(g):
            self._acc(np.full(shape, g / size))

        return self.tape._record(np.float64(np.mean(self.value)), "mean", (self,), backward)

    # -- nonlinearities ---------------------------------------------------

    def sigmoid(self):
        a = expit(self.value)

        def backward(g):
            self._acc(g * (a * (1.0 - a)))

        return self.tape._record(a, "sigmoid", (self,), backward)

    def tanh(self):
        a = np.tanh(self.value)

        def backward(g):
            self._acc(g * (1.0 - a * a))

        return self.tape._record(a, "tanh", (self,), backward)

    def abs_pow(self, q: float):
        """Elementwise |x|**q.

        Local derivative q*|x|**(q-1)*sign(x); at x == 0 the derivative is
        taken as 0 (the chosen subdifferential element when q <= 1), and
        the tape's kink flag is raised when q < 1 so callers can tell a
        kink was hit.
        """
        x = self.value
        if q == 2.0:
            val, dfx = x * x, 2.0 * x
        elif q == 1.0:
            val, dfx = np.abs(x), np.sign(x)
        else:
            ax = np.abs(x)
            val = ax ** q
            with np.errstate(divide="ignore", invalid="ignore"):
                dfx = np.where(x == 0.0, 0.0, q * np.sign(x) * ax ** (q - 1.0))
        if q < 1.0 and np.any(x == 0.0):
            self.tape.kink_hit = True

        def backward(g):
            self._acc(g * dfx)

        return self.tape._record(val, f"abs_pow[{q}]", (self,), backward)

    def huber(self, delta: float):
        x = self.value
        ax = np.abs(x)
        small = ax <= delta
        val = np.where(small, 0.5 * x * x, delta * (ax - 0.5 * delta))
        dfx = np.where(small, x, delta * np.sign(x))

        def backward(g):
            self._acc(g * dfx)

        return self.tape._record(val, "huber", (self,), backward)

    def tukey(self, c: float):
        x = self.value
        inside = np.abs(x) <= c
        u = 1.0 - (x / c) ** 2
        val = np.where(inside, (c * c / 6.0) * (1.0 - u ** 3), c * c / 6.0)
        dfx = np.where(inside, x * u * u, 0.0)

        def backward(g):
            self._acc(g * dfx)

        return self.tape._record(val, "tukey", (self,), backward)


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.kink_hit = False

    def _record(self, value, op, parents, backward) -> Node:
        track = any(p.track for p in parents)
        node = Node(self, len(self.nodes), value, op, parents,
                    track, backward if track else None)
        self.nodes.append(node)
        return node

    def leaf(self, value) -> Node:
        node = Node(self, len(self.nodes), np.asarray(value, dtype=np.float64),
                    "leaf", (), True, None)
        self.nodes.append(node)
        return node

    def const(self, value) -> Node:
        node = Node(self, len(self.nodes), np.asarray(value, dtype=np.float64),
                    "const", (), False, None)
        self.nodes.append(node)
        return node

    def backward(self, out: Node) -> None:
        """Reverse sweep from `out`, in strictly decreasing node order."""
        out.grad = np.float64(1.0)
        for node in reversed(self.nodes[: out.index + 1]):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)

    def first_nonfinite(self) -> int:
        for node in self.nodes:
            if not np.all(np.isfinite(node.value)):
                return node.index
            if node.grad is not None and not np.all(np.isfinite(node.grad)):
                return node.index
        return -1


def grad_scalar(objective, theta: np.ndarray) -> np.ndarray:
    """Gradient of a scalar tape objective with respect to flat theta.

    `objective(tape, theta_node)` must return a scalar node. Raises
    TapeOverflowError (carrying the offending node index) if a non-finite
    value shows up in the forward pass or the gradient.
    """
    theta = np.asarray(theta, dtype=np.float64)
    tape = Tape()
    th = tape.leaf(theta)
    out = objective(tape, th)
    if np.shape(out.value) != ():
        raise ValueError(f"objective must be scalar, got shape {np.shape(out.value)}")
    if not np.isfinite(out.value):
        raise TapeOverflowError(max(tape.first_nonfinite(), 0), "forward")
    tape.backward(out)
    g = th.grad if th.grad is not None else np.zeros_like(theta)
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise TapeOverflowError(max(tape.first_nonfinite(), 0), "backward")
    return g
