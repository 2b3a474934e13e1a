"""Trimmed squared loss, its augmented reformulation, and robust baselines.

The h-trimmed loss averages the h smallest squared residuals over n. Its
augmented form introduces one auxiliary variable per sample so that the
model parameters sit outside the sorting:

    min_xi (1/n)||r - xi||^2 + T_h(xi)  =  (1/2) T_h(r).

The augmented objective splits as F = U - V with U smooth and
V_h(xi) = (1/n)||xi||^2 - T_h(xi) convex; V_h equals the average of the
(n - h) largest xi_i^2, so a subgradient picks those coordinates.

Ties in |.| are always broken by original index via a stable sort, and the
kept/trimmed partition is shared by every routine here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrimSpec:
    """Number of samples kept by the trimmed loss."""

    h: int

    def validate(self, n: int) -> None:
        if not 1 <= self.h <= n:
            raise ValueError(f"need 1 <= h <= n, got h={self.h}, n={n}")


@dataclass
class AugmentedState:
    """The pair (theta, xi) the optimizer walks on."""

    theta: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.xi = np.asarray(self.xi, dtype=np.float64)

    def copy(self) -> "AugmentedState":
        return AugmentedState(self.theta.copy(), self.xi.copy())


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def h_from_fraction(n: int, fraction: float) -> int:
    return min(n, max(1, round_half_up(fraction * n)))


def kept_indices(values: np.ndarray, h: int) -> np.ndarray:
    """Indices of the h smallest |values|, stable in the original order."""
    order = np.argsort(np.abs(values), kind="stable")
    return order[:h]


def trimmed_loss(r: np.ndarray, h: int) -> float:
    """Average of the h smallest squared entries, divided by n."""
    r = np.asarray(r, dtype=np.float64)
    n = r.shape[0]
    TrimSpec(h).validate(n)
    keep = kept_indices(r, h)
    return float(np.sum(r[keep] ** 2) / n)


def inner_min_xi(r: np.ndarray, h: int) -> tuple[np.ndarray, float]:
    """Minimizer of (1/n)||r - xi||^2 + T_h(xi) and its value.

    The optimum halves the kept residuals and copies the trimmed ones; the
    value equals half the trimmed loss of r.
    """
    r = np.asarray(r, dtype=np.float64)
    n = r.shape[0]
    TrimSpec(h).validate(n)
    keep = kept_indices(r, h)
    xi = r.copy()
    xi[keep] = 0.5 * r[keep]
    value = float(np.sum((r - xi) ** 2) / n + trimmed_loss(xi, h))
    return xi, value


def v_h_value(xi: np.ndarray, h: int) -> float:
    """Exact V_h(xi): average of the (n - h) largest xi_i^2."""
    xi = np.asarray(xi, dtype=np.float64)
    n = xi.shape[0]
    TrimSpec(h).validate(n)
    keep = kept_indices(xi, h)
    total = float(np.sum(xi ** 2) - np.sum(xi[keep] ** 2))
    return total / n


def v_h_subgradient(xi: np.ndarray, h: int) -> np.ndarray:
    """A subgradient of V_h: (2/n) xi_i on the (n - h) largest |xi_i|."""
    xi = np.asarray(xi, dtype=np.float64)
    n = xi.shape[0]
    TrimSpec(h).validate(n)
    keep = kept_indices(xi, h)
    v = (2.0 / n) * xi
    v[keep] = 0.0
    return v


def artl_value(state: AugmentedState, r: np.ndarray, h: int,
               hovr_value: float, lam: float) -> float:
    """Augmented objective F = U - V at (theta, xi) given residuals r.

    V_h is evaluated exactly (by sorting) so F can serve as a descent
    diagnostic.
    """
    r = np.asarray(r, dtype=np.float64)
    xi = state.xi
    if xi.shape != r.shape:
        raise ValueError(f"xi shape {xi.shape} does not match residuals {r.shape}")
    n = r.shape[0]
    u = (np.sum((r - xi) ** 2) + np.sum(xi ** 2)) / n + lam * hovr_value
    return float(u - v_h_value(xi, h))


def huber_loss(r: float, delta: float = 1.0) -> float:
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    a = abs(r)
    return 0.5 * r * r if a <= delta else delta * (a - 0.5 * delta)


def tukey_loss(r: float, c: float = 4.685) -> float:
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    if abs(r) >= c:
        return c * c / 6.0
    u = 1.0 - (r / c) ** 2
    return (c * c / 6.0) * (1.0 - u ** 3)
