"""Multilayer perceptron with a flat parameter vector.

The network maps a box domain in R^J to a single real output through Q
hidden layers (sigmoid or tanh) followed by a linear output layer. All
parameters live in one flat float64 vector so that optimizers and the
differentiation engine can treat the model as a plain function of theta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

_ACTIVATIONS = ("sigmoid", "tanh")


@dataclass(frozen=True)
class MlpArchitecture:
    """Shape of the network: input dim J, hidden widths, activation name."""

    input_dim: int
    hidden_widths: tuple[int, ...] = (100, 100, 100)
    activation: str = "sigmoid"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden_widths}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        # (L_0, L_1, ..., L_Q, 1); output width is fixed to 1
        return (self.input_dim, *self.hidden_widths, 1)

    def param_count(self) -> int:
        dims = self.layer_dims
        return sum(dims[q + 1] * dims[q] + dims[q + 1] for q in range(len(dims) - 1))

    def layout(self) -> tuple[tuple[str, int, int], ...]:
        """Flattening order: ("W", rows, cols) then ("b", rows, 1) per layer."""
        dims = self.layer_dims
        out = []
        for q in range(len(dims) - 1):
            out.append(("W", dims[q + 1], dims[q]))
            out.append(("b", dims[q + 1], 1))
        return tuple(out)


@dataclass
class ParamVector:
    """Flat parameter values plus the layer-shape layout they flatten from."""

    values: np.ndarray
    layout: tuple[tuple[str, int, int], ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expect = sum(r * c if kind == "W" else r for kind, r, c in self.layout)
        if self.values.shape != (expect,):
            raise ValueError(f"expected {expect} values for layout, got shape {self.values.shape}")

    @classmethod
    def from_layers(cls, layers) -> "ParamVector":
        layout, chunks = [], []
        for W, b in layers:
            W = np.asarray(W, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            layout.append(("W", W.shape[0], W.shape[1]))
            layout.append(("b", b.shape[0], 1))
            chunks.append(W.ravel())
            chunks.append(b.ravel())
        return cls(np.concatenate(chunks), tuple(layout))

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out, pos, pending = [], 0, None
        for kind, r, c in self.layout:
            size = r * c if kind == "W" else r
            chunk = self.values[pos:pos + size]
            pos += size
            if kind == "W":
                pending = chunk.reshape(r, c)
            else:
                out.append((pending, chunk))
        return out


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned box, the covariate domain the model is defined on."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper must have the same length")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"need lower < upper per axis, got {self.lower} / {self.upper}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=np.float64)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=np.float64)

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(m, self.dim))

    @classmethod
    def from_points(cls, X: np.ndarray, pad: float = 0.5) -> "DomainBox":
        X = np.asarray(X, dtype=np.float64)
        lo, hi = X.min(axis=0), X.max(axis=0)
        flat = lo >= hi
        lo = np.where(flat, lo - pad, lo)
        hi = np.where(flat, hi + pad, hi)
        return cls(tuple(lo), tuple(hi))


def init(arch: MlpArchitecture, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases; deterministic given seed."""
    rng = np.random.default_rng(seed)
    dims = arch.layer_dims
    chunks = []
    for q in range(len(dims) - 1):
        fan_in, fan_out = dims[q], dims[q + 1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_out * fan_in))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def unflatten(theta, arch: MlpArchitecture) -> list:
    """Split a flat theta into [(W, b), ...].

    Works on any 1-D object supporting slicing and .reshape, so the same
    code serves numpy arrays and autodiff tape nodes.
    """
    dims = arch.layer_dims
    out, pos = [], 0
    for q in range(len(dims) - 1):
        rows, cols = dims[q + 1], dims[q]
        W = theta[pos:pos + rows * cols].reshape(rows, cols)
        pos += rows * cols
        b = theta[pos:pos + rows]
        pos += rows
        out.append((W, b))
    return out


def _act(z: np.ndarray, name: str) -> np.ndarray:
    return expit(z) if name == "sigmoid" else np.tanh(z)


def predict(theta: np.ndarray, arch: MlpArchitecture, X: np.ndarray) -> np.ndarray:
    """Batched forward pass, X of shape (m, J) -> outputs of shape (m,)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise ValueError(f"expected X of shape (m, {arch.input_dim}), got {X.shape}")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (arch.param_count(),):
        raise ValueError(f"expected {arch.param_count()} parameters, got shape {theta.shape}")
    layers = unflatten(theta, arch)
    A = X
    for W, b in layers[:-1]:
        A = _act(A @ W.T + b, arch.activation)
    W, b = layers[-1]
    return (A @ W.T + b)[:, 0]


def forward(theta: np.ndarray, arch: MlpArchitecture, x) -> float:
    """Single-point forward pass."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != arch.input_dim:
        raise ValueError(f"expected point of dimension {arch.input_dim}, got {x.shape[0]}")
    return float(predict(theta, arch, x[None, :])[0])


def save_params(path, theta: np.ndarray, arch: MlpArchitecture) -> None:
    """One value per line; header cell records the architecture."""
    widths = ";".join(str(w) for w in arch.hidden_widths)
    header = f"theta|J={arch.input_dim}|widths={widths}|activation={arch.activation}"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for v in np.asarray(theta, dtype=np.float64):
            fh.write(repr(float(v)) + "\n")


def load_params(path) -> tuple[np.ndarray, MlpArchitecture]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        fields = dict(part.split("=", 1) for part in header.split("|")[1:])
        widths = tuple(int(w) for w in fields["widths"].split(";") if w)
        arch = MlpArchitecture(int(fields["J"]), widths, fields["activation"])
        values = np.array([float(line) for line in fh if line.strip()], dtype=np.float64)
    if values.shape[0] != arch.param_count():
        raise ValueError(f"file holds {values.shape[0]} values, layout wants {arch.param_count()}")
    return values, arch
