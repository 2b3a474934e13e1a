"""Gradient-supergradient descent on the augmented trimmed objective.

Each step moves (theta, xi) against u - (0, v), where u stacks the exact
gradient of the smooth data term with a Monte-Carlo gradient of the
derivative-variation penalty, and v is a subgradient of the convex
nonsmooth part V_h. The plain update is the theory path; an Adam-scaled
variant of the same direction is the default for experiments.

The penalty enters the objective as lam times the domain-averaged
variation (integral / vol), so the configured lam keeps its meaning
regardless of the integration box; diagnostics still report the
integral-scale estimate.

Runs are deterministic given (config, seed): the MC batch of iteration t
is drawn from a generator keyed by (seed, t).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tape
from .data import Dataset
from .hovr import HovrSpec, _mean_coeffs
from .jets import (act_derivative_factors, jet_stack_outputs, mlp_forward_parts,
                   mlp_value_chain)
from .losses import (AugmentedState, TrimSpec, kept_indices, trimmed_loss,
                     v_h_subgradient, v_h_value)
from .model import MlpArchitecture, unflatten

_ADAM_B1, _ADAM_B2, _ADAM_EPS = 0.9, 0.999, 1e-8
_CRIT_STREAM, _TAU_STREAM = 0x5EED1, 0x5EED2


class DivergenceError(RuntimeError):
    """Training produced a non-finite value; carries the iteration index."""

    def __init__(self, iteration: int, detail: str = ""):
        self.iteration = iteration
        super().__init__(f"diverged at iteration {iteration}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule; all kinds have their maximum at t = 0."""

    kind: str = "step_decay"
    base_rate: float = 0.01
    gamma: float = 0.5
    period: int = 1000

    def __post_init__(self):
        if self.kind not in ("constant", "step_decay", "inverse_sqrt", "inverse"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.base_rate <= 0:
            raise ValueError(f"base_rate must be positive, got {self.base_rate}")
        if self.kind == "step_decay" and not 0.0 < self.gamma < 1.0:
            raise ValueError(f"step decay gamma must be in (0, 1), got {self.gamma}")
        if self.kind == "step_decay" and self.period < 1:
            raise ValueError(f"step decay period must be >= 1, got {self.period}")

    def rate(self, t: int) -> float:
        if self.kind == "constant":
            return self.base_rate
        if self.kind == "step_decay":
            return self.base_rate * self.gamma ** (t // self.period)
        if self.kind == "inverse_sqrt":
            return self.base_rate * (1.0 + t) ** -0.5
        return self.base_rate / (1.0 + t)


def stopping_probabilities(schedule: Schedule, iterations: int,
                           lmu2: float | None = None) -> np.ndarray:
    """P(tau = s) proportional to 2*w_s - lmu2*w_s^2 over s = 0..T.

    lmu2 stands in for the unknown smoothness/variance product; the default
    sets lmu2 * max_rate = 1, safely inside the admissible range.
    """
    rates = np.array([schedule.rate(t) for t in range(iterations + 1)])
    if lmu2 is None:
        lmu2 = 1.0 / float(rates.max())
    w = 2.0 * rates - lmu2 * rates ** 2
    if np.any(w <= 0.0):
        raise ValueError("stopping weights must be positive; lower lmu2 or the rates")
    return w / w.sum()


def sample_stopping_index(schedule: Schedule, iterations: int,
                          rng: np.random.Generator,
                          lmu2: float | None = None) -> int:
    p = stopping_probabilities(schedule, iterations, lmu2)
    return int(rng.choice(iterations + 1, p=p))


def _data_term_grad(theta: np.ndarray, arch: MlpArchitecture, X: np.ndarray,
                    y: np.ndarray, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """theta-gradient of (1/n)||r(theta) - xi||^2, plus the residuals."""
    n = X.shape[0]
    tape = Tape()
    th = tape.leaf(theta)
    layers = unflatten(th, arch)
    out, _ = mlp_value_chain(layers, X, arch.activation)
    d = tape.const(y[:, None] - xi[:, None]) - out
    loss = (d * d).sum() * (1.0 / n)
    tape.backward(loss)
    g = th.grad if th.grad is not None else np.zeros_like(theta)
    r = y - np.asarray(out.value)[:, 0]
    return np.asarray(g, dtype=np.float64), r


def _smooth_part_grad(theta: np.ndarray, arch: MlpArchitecture, X: np.ndarray,
                      y: np.ndarray, xi: np.ndarray, hovr_spec: HovrSpec,
                      rng: np.random.Generator):
    """theta-gradient of the smooth part (1/n)||r - xi||^2 + lam * mean
    derivative variation (the integral-scale penalty divided by vol).

    One tape serves the data rows and the MC penalty batch: the value
    chain runs on their concatenation and the penalty streams reuse its
    activations. Returns (g_theta, residuals, penalty_estimate) with the
    estimate reported on the integral scale.
    """
    n = X.shape[0]
    with_pen = hovr_spec.lam > 0.0
    P = np.vstack([X, hovr_spec.domain.sample(rng, hovr_spec.mc_samples)]) if with_pen else X

    tape = Tape()
    th = tape.leaf(theta)
    layers = unflatten(th, arch)
    out, acts, hidden_Wts, out_Wt = mlp_forward_parts(layers, P, arch.activation)
    out_data = out[:n] if with_pen else out
    d = tape.const(y[:, None] - xi[:, None]) - out_data
    total = (d * d).sum() * (1.0 / n)
    est = 0.0
    if with_pen:
        acts_z = [a[n:] for a in acts]
        s1s, s2s = act_derivative_factors(acts_z, arch.activation, hovr_spec.k)
        dz = jet_stack_outputs(hidden_Wts, out_Wt, s1s, s2s,
                               [mi for mi, _ in hovr_spec.weights], arch.input_dim)
        if dz is not None:
            term = dz.abs_pow(hovr_spec.q)
            pen = (term * _mean_coeffs(hovr_spec, np.shape(term.value)[1],
                                       include_vol=False)).sum()
            est = float(pen.value) * hovr_spec.domain.volume()
            total = total + hovr_spec.lam * pen
    tape.backward(total)
    g = th.grad if th.grad is not None else np.zeros_like(theta)
    r = y - np.asarray(out.value)[:n, 0]
    return np.asarray(g, dtype=np.float64), r, est


def sgsd_direction(state: AugmentedState, data: Dataset, arch: MlpArchitecture,
                   trim: TrimSpec, hovr_spec: HovrSpec,
                   rng: np.random.Generator):
    """The stochastic gradient-supergradient g = u - (0, v).

    Returns (g_theta, g_xi, residuals, penalty_estimate). The data term
    uses the full batch; only the penalty gradient is stochastic.
    """
    n = data.n
    trim.validate(n)
    g_theta, r, est = _smooth_part_grad(state.theta, arch, data.X, data.y,
                                        state.xi, hovr_spec, rng)
    u_xi = (2.0 / n) * (state.xi - r) + (2.0 / n) * state.xi
    g_xi = u_xi - v_h_subgradient(state.xi, trim.h)
    return g_theta, g_xi, r, est


def sgsd_step(state: AugmentedState, data: Dataset, arch: MlpArchitecture,
              trim: TrimSpec, hovr_spec: HovrSpec, rate: float,
              rng: np.random.Generator) -> AugmentedState:
    """One plain descent step (theta, xi) <- (theta, xi) - rate * g."""
    if rate < 0:
        raise ValueError(f"rate must be nonnegative, got {rate}")
    g_theta, g_xi, _, _ = sgsd_direction(state, data, arch, trim, hovr_spec, rng)
    theta = state.theta - rate * g_theta
    xi = state.xi - rate * g_xi
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(xi))):
        raise DivergenceError(0, "non-finite update")
    return AugmentedState(theta, xi)


def _vh_distance_sq(g: np.ndarray, xi: np.ndarray, h: int) -> float:
    """Exact squared distance from g to the subdifferential of V_h at xi.

    Coordinates strictly inside the largest-(n-h) set contribute
    (g_i - 2 xi_i / n)^2, strictly outside contribute g_i^2, and boundary
    ties are resolved by a tiny separable QP over the hypersimplex of
    admissible convex combinations.
    """
    n = xi.shape[0]
    m = n - h
    if m == 0:
        return float(g @ g)
    order = np.argsort(np.abs(xi), kind="stable")
    b = float(np.abs(xi[order[h]]))
    c = (2.0 / n) * xi
    a = np.abs(xi)
    strict_in = a > b
    tied = a == b
    out = a < b
    m2 = m - int(np.count_nonzero(strict_in))

    total = float(np.sum((g[strict_in] - c[strict_in]) ** 2) + np.sum(g[out] ** 2))
    gt, ct = g[tied], c[tied]
    K = gt.shape[0]
    if b == 0.0:
        return total + float(np.sum(gt ** 2))
    if m2 == 0:
        return total + float(np.sum(gt ** 2))
    if m2 == K:
        return total + float(np.sum((gt - ct) ** 2))

    # minimize sum (g_i - alpha_i c_i)^2 over alpha in [0,1]^K, sum = m2
    def alpha_of(mu):
        return np.clip((2.0 * ct * gt - mu) / (2.0 * ct ** 2), 0.0, 1.0)

    lo = float(np.min(2.0 * ct * gt - 2.0 * ct ** 2)) - 1.0
    hi = float(np.max(2.0 * ct * gt)) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if alpha_of(mid).sum() > m2:
            lo = mid
        else:
            hi = mid
    alpha = alpha_of(0.5 * (lo + hi))
    return total + float(np.sum((gt - alpha * ct) ** 2))


def criticality_estimate(state: AugmentedState, data: Dataset,
                         arch: MlpArchitecture, trim: TrimSpec,
                         hovr_spec: HovrSpec, mc_eval_samples: int,
                         rng: np.random.Generator | None = None) -> float:
    """Distance from the estimated smooth gradient to {0} x dV_h."""
    if mc_eval_samples < 1:
        raise ValueError(f"mc_eval_samples must be >= 1, got {mc_eval_samples}")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = data.n
    trim.validate(n)
    big = replace(hovr_spec, mc_samples=mc_eval_samples)
    g_theta, r, _ = _smooth_part_grad(state.theta, arch, data.X, data.y,
                                      state.xi, big, rng)
    u_xi = (2.0 / n) * (state.xi - r) + (2.0 / n) * state.xi
    return float(np.sqrt(g_theta @ g_theta + _vh_distance_sq(u_xi, state.xi, trim.h)))


@dataclass
class SgsdReport:
    """Per-iteration diagnostics (length iterations + 1) plus the end state."""

    seed: int
    iterations: int
    f_value: np.ndarray
    grad_norm: np.ndarray
    trimmed: np.ndarray
    hov_estimate: np.ndarray
    criticality: np.ndarray
    rate: np.ndarray
    final_state: AugmentedState
    tau_index: int

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "F", "trimmed_loss", "hov_estimate",
                             "criticality", "rate"])
            for t in range(self.iterations + 1):
                crit = "" if np.isnan(self.criticality[t]) else repr(float(self.criticality[t]))
                writer.writerow([t, repr(float(self.f_value[t])),
                                 repr(float(self.trimmed[t])),
                                 repr(float(self.hov_estimate[t])), crit,
                                 repr(float(self.rate[t]))])


def _run_augmented(update_kind: str, init_state: AugmentedState, data: Dataset,
                   arch: MlpArchitecture, trim: TrimSpec, hovr_spec: HovrSpec,
                   schedule: Schedule, iterations: int, seed: int,
                   criticality_every: int, criticality_samples: int,
                   lmu2: float | None) -> SgsdReport:
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    n = data.n
    trim.validate(n)
    state = init_state.copy()
    n_theta = state.theta.shape[0]

    T = iterations
    f_value = np.zeros(T + 1)
    grad_norm = np.zeros(T + 1)
    trimmed = np.zeros(T + 1)
    hov_estimate = np.zeros(T + 1)
    criticality = np.full(T + 1, np.nan)
    rates = np.zeros(T + 1)

    if update_kind == "adam":
        mom1 = np.zeros(n_theta + n)
        mom2 = np.zeros(n_theta + n)

    vol = hovr_spec.domain.volume()
    for t in range(T + 1):
        rng_t = np.random.default_rng((seed, t))
        g_theta, g_xi, r, est = sgsd_direction(state, data, arch, trim, hovr_spec, rng_t)
        g = np.concatenate([g_theta, g_xi])
        u_quad = (np.sum((r - state.xi) ** 2) + np.sum(state.xi ** 2)) / n
        f_value[t] = u_quad + hovr_spec.lam * (est / vol) - v_h_value(state.xi, trim.h)
        grad_norm[t] = float(np.sqrt(g @ g))
        trimmed[t] = trimmed_loss(r, trim.h)
        hov_estimate[t] = est
        rates[t] = schedule.rate(t)
        if criticality_every > 0 and t % criticality_every == 0:
            crng = np.random.default_rng((seed, _CRIT_STREAM, t))
            criticality[t] = criticality_estimate(state, data, arch, trim,
                                                  hovr_spec, criticality_samples, crng)
        if t == T:
            break
        if update_kind == "adam":
            mom1 = _ADAM_B1 * mom1 + (1.0 - _ADAM_B1) * g
            mom2 = _ADAM_B2 * mom2 + (1.0 - _ADAM_B2) * g * g
            mhat = mom1 / (1.0 - _ADAM_B1 ** (t + 1))
            vhat = mom2 / (1.0 - _ADAM_B2 ** (t + 1))
            step = rates[t] * mhat / (np.sqrt(vhat) + _ADAM_EPS)
        else:
            step = rates[t] * g
        theta = state.theta - step[:n_theta]
        xi = state.xi - step[n_theta:]
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(xi))):
            raise DivergenceError(t)
        state = AugmentedState(theta, xi)

    tau_rng = np.random.default_rng((seed, _TAU_STREAM))
    tau = sample_stopping_index(schedule, T, tau_rng, lmu2)
    return SgsdReport(seed, T, f_value, grad_norm, trimmed, hov_estimate,
                      criticality, rates, state, tau)


def run_sgsd(init_state: AugmentedState, data: Dataset, arch: MlpArchitecture,
             trim: TrimSpec, hovr_spec: HovrSpec, schedule: Schedule,
             iterations: int, seed: int, criticality_every: int = 100,
             criticality_samples: int = 4096,
             lmu2: float | None = None) -> SgsdReport:
    """Plain descent along the gradient-supergradient (theory path)."""
    return _run_augmented("plain", init_state, data, arch, trim, hovr_spec,
                          schedule, iterations, seed, criticality_every,
                          criticality_samples, lmu2)


def run_adam_artl(init_state: AugmentedState, data: Dataset,
                  arch: MlpArchitecture, trim: TrimSpec, hovr_spec: HovrSpec,
                  base_rate: float = 0.01, gamma: float = 0.5,
                  period: int = 1000, iterations: int = 5000, seed: int = 0,
                  criticality_every: int = 0, criticality_samples: int = 4096,
                  lmu2: float | None = None) -> SgsdReport:
    """Same direction as the plain path, fed through Adam moment scaling
    with step decay (the experiment default)."""
    schedule = Schedule("step_decay", base_rate, gamma, period)
    return _run_augmented("adam", init_state, data, arch, trim, hovr_spec,
                          schedule, iterations, seed, criticality_every,
                          criticality_samples, lmu2)


def adam_minimize(grad_fn, x0: np.ndarray, schedule: Schedule,
                  iterations: int) -> np.ndarray:
    """Generic Adam loop for the baseline trainers; grad_fn(x, t) -> grad."""
    x = np.asarray(x0, dtype=np.float64).copy()
    mom1 = np.zeros_like(x)
    mom2 = np.zeros_like(x)
    for t in range(iterations):
        g = grad_fn(x, t)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(t)
        mom1 = _ADAM_B1 * mom1 + (1.0 - _ADAM_B1) * g
        mom2 = _ADAM_B2 * mom2 + (1.0 - _ADAM_B2) * g * g
        mhat = mom1 / (1.0 - _ADAM_B1 ** (t + 1))
        vhat = mom2 / (1.0 - _ADAM_B2 ** (t + 1))
        x = x - schedule.rate(t) * mhat / (np.sqrt(vhat) + _ADAM_EPS)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(t)
    return x
