"""Integrated derivative-variation penalty: MC estimator and references.

The penalty is a weighted sum over multi-indices of the integral of
|k-th input derivative|^q over the domain box. Uniform sampling estimates
each integral as vol(domain) times the sample mean of the integrand, so
the penalty weight keeps the same meaning under Monte Carlo and under the
midpoint-rule reference `quad_hovr`. For linear basis models with q = 2
the penalty is the quadratic form theta' G theta, which `basis_model_hov`
evaluates as an independent oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .jets import (act_derivative_factors, check_multi_index, jet_stack_outputs,
                   mlp_forward_parts)
from .model import DomainBox, MlpArchitecture, unflatten


def diagonal_weights(input_dim: int, k: int) -> tuple[tuple[tuple[int, ...], float], ...]:
    """Equal weight 1/J on each repeated-coordinate multi-index."""
    return tuple(((j,) * k, 1.0 / input_dim) for j in range(1, input_dim + 1))


@dataclass(frozen=True)
class HovrSpec:
    """Penalty configuration: order k, power q, weight lambda, weighted
    multi-indices, integration domain, and MC batch size.

    Estimators in this module report the integral over the domain. During
    training, lam multiplies the domain-averaged variation (the integral
    divided by vol(domain)) so its meaning does not drift with the size of
    the integration box.
    """

    k: int
    q: float
    lam: float
    domain: DomainBox
    weights: tuple[tuple[tuple[int, ...], float], ...] = ()
    mc_samples: int = 64

    def __post_init__(self):
        if self.k not in (1, 2):
            raise ValueError(f"only derivative orders 1 and 2 are supported, got k={self.k}")
        if self.q <= 0:
            raise ValueError(f"q must be positive, got {self.q}")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.mc_samples < 1:
            raise ValueError(f"mc_samples must be >= 1, got {self.mc_samples}")
        weights = self.weights or diagonal_weights(self.domain.dim, self.k)
        weights = tuple((check_multi_index(mi, self.domain.dim), float(w)) for mi, w in weights)
        object.__setattr__(self, "weights", weights)
        for mi, w in self.weights:
            if len(mi) != self.k:
                raise ValueError(f"multi-index {mi} does not match k={self.k}")
            if w < 0:
                raise ValueError(f"weights must be nonnegative, got {w}")
        total = sum(w for _, w in self.weights)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {total}")


def mc_hovr_grad(theta: np.ndarray, arch: MlpArchitecture, spec: HovrSpec,
                 rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Unbiased Monte-Carlo estimate of the penalty and its theta-gradient.

    Draws mc_samples uniform points from the domain box and averages the
    per-point terms; one tape serves every multi-index, so the gradient
    comes from a single reverse sweep.
    """
    theta = np.asarray(theta, dtype=np.float64)
    Z = spec.domain.sample(rng, spec.mc_samples)

    tape = Tape()
    th = tape.leaf(theta)
    layers = unflatten(th, arch)
    _, acts, hidden_Wts, out_Wt = mlp_forward_parts(layers, Z, arch.activation)
    s1s, s2s = act_derivative_factors(acts, arch.activation, spec.k)
    d = jet_stack_outputs(hidden_Wts, out_Wt, s1s, s2s,
                          [mi for mi, _ in spec.weights], arch.input_dim)
    if d is None:
        return 0.0, np.zeros_like(theta)
    term = d.abs_pow(spec.q)
    total = (term * _mean_coeffs(spec, np.shape(term.value)[1])).sum()
    tape.backward(total)
    grad = th.grad if th.grad is not None else np.zeros_like(theta)
    return float(total.value), np.asarray(grad, dtype=np.float64)


def _mean_coeffs(spec: HovrSpec, m_eff: int, include_vol: bool = True) -> np.ndarray:
    """Per-multi-index factors turning a stacked sum into (vol times)
    weighted means; m_eff is 1 when a constant stream never broadcast."""
    scale = spec.domain.volume() if include_vol else 1.0
    w = np.array([w for _, w in spec.weights])
    return (w * scale / m_eff).reshape(-1, 1, 1)


def quad_hovr(theta: np.ndarray, arch: MlpArchitecture, spec: HovrSpec,
              grid_per_dim: int = 120, chunk: int = 8192) -> float:
    """Midpoint-rule tensor-grid value of the penalty (reference path)."""
    J = spec.domain.dim
    if J > 3:
        raise ValueError(f"quadrature supports at most 3 input dimensions, got {J}")
    if grid_per_dim < 2:
        raise ValueError(f"grid_per_dim must be >= 2, got {grid_per_dim}")
    theta = np.asarray(theta, dtype=np.float64)
    lo, hi = spec.domain.lo, spec.domain.hi
    axes = [lo[j] + (np.arange(grid_per_dim) + 0.5) * (hi[j] - lo[j]) / grid_per_dim
            for j in range(J)]
    mesh = np.meshgrid(*axes, indexing="ij")
    Z = np.stack([m.ravel() for m in mesh], axis=1)

    layers = unflatten(theta, arch)
    mis = [mi for mi, _ in spec.weights]
    sums = np.zeros(len(mis))
    for start in range(0, Z.shape[0], chunk):
        block = Z[start:start + chunk]
        _, acts, hidden_Wts, out_Wt = mlp_forward_parts(layers, block, arch.activation)
        s1s, s2s = act_derivative_factors(acts, arch.activation, spec.k)
        d = jet_stack_outputs(hidden_Wts, out_Wt, s1s, s2s, mis, arch.input_dim)
        if d is not None:
            # constant streams keep a length-1 sample axis; means are exact
            sums += np.mean(np.abs(d) ** spec.q, axis=(1, 2)) * block.shape[0]
    means = sums / Z.shape[0]
    weights = np.array([w for _, w in spec.weights])
    return float(spec.domain.volume() * (weights @ means))


def basis_model_hov(G: np.ndarray, theta_linear: np.ndarray) -> float:
    """theta' G theta for a linear basis model; G must be symmetric."""
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"G must be square, got shape {G.shape}")
    if not np.allclose(G, G.T, rtol=0.0, atol=1e-12):
        raise ValueError("G must be symmetric")
    theta_linear = np.asarray(theta_linear, dtype=np.float64)
    return float(theta_linear @ G @ theta_linear)
