"""Metrics, robust validation, baseline trainers, and the breakdown test.

The trainers all share one TrainSpec so that experiment code, the
contamination stress test, and the CLI drive a single fit() entry point.
Baselines (Huber, Tukey, iterative-trimming "ransac-like", linear Huber)
use the same architecture and Adam schedule as the main method unless the
spec says otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .autodiff import Tape
from .data import Dataset
from .hovr import HovrSpec, quad_hovr
from .jets import mlp_value_chain
from .losses import (AugmentedState, TrimSpec, h_from_fraction, inner_min_xi,
                     trimmed_loss)
from .model import MlpArchitecture, unflatten
from . import model
from .optimizer import Schedule, SgsdReport, adam_minimize, run_adam_artl, run_sgsd

ARTL_FAMILY = ("artl", "trimmed_only", "hovr_only")
BASELINES = ("mse", "huber", "tukey", "ransac", "linear_huber")


@dataclass(frozen=True)
class TrainSpec:
    """Everything needed to train one model on one dataset."""

    loss: str = "artl"
    widths: tuple[int, ...] = (100, 100, 100)
    activation: str = "sigmoid"
    h_fraction: float = 0.9
    k: int = 2
    lam: float = 1e-3
    q: float = 2.0
    mc_samples: int = 64
    optimizer: str = "adam"          # adam | sgsd
    base_rate: float = 0.01
    schedule: str = "step_decay"
    gamma: float = 0.5
    period: int = 1000
    iterations: int = 5000
    huber_delta: float = 1.0
    tukey_c: float = 4.685
    ransac_phase: int = 500
    ransac_drop: float = 0.10
    criticality_every: int = 0
    criticality_samples: int = 4096
    xi_init: str = "inner"           # inner | zero

    def __post_init__(self):
        if self.loss not in ARTL_FAMILY + BASELINES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.loss == "artl" and not (self.lam > 0.0 and self.h_fraction < 1.0):
            raise ValueError("artl needs lambda > 0 and h_fraction < 1")

    def arch_for(self, input_dim: int) -> MlpArchitecture:
        widths = () if self.loss == "linear_huber" else self.widths
        return MlpArchitecture(input_dim, widths, self.activation)


@dataclass
class FitResult:
    theta: np.ndarray
    arch: MlpArchitecture
    report: SgsdReport | None = None


def pmse(theta: np.ndarray, arch: MlpArchitecture, test: Dataset) -> float:
    """Mean squared prediction error on a test set."""
    if test.n == 0:
        raise ValueError("test set is empty")
    pred = model.predict(theta, arch, test.X)
    return float(np.mean((pred - test.y) ** 2))


def robust_validation_score(theta: np.ndarray, arch: MlpArchitecture,
                            val: Dataset, h_fraction: float) -> float:
    """Trimmed loss of the validation residuals with h = round(frac * n)."""
    if not 0.0 < h_fraction <= 1.0:
        raise ValueError(f"h_fraction must be in (0, 1], got {h_fraction}")
    r = val.y - model.predict(theta, arch, val.X)
    return trimmed_loss(r, h_from_fraction(val.n, h_fraction))


def correlations(a, b) -> tuple[float, float]:
    """(Pearson, Spearman with average-rank ties)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 3:
        raise ValueError("need two equal-length 1-D arrays with >= 3 entries")
    if np.std(a) == 0.0 or np.std(b) == 0.0:
        raise ValueError("correlation undefined for zero-variance input")
    pearson = float(stats.pearsonr(a, b).statistic)
    spearman = float(stats.spearmanr(a, b).statistic)
    return pearson, spearman


def _hovr_spec_for(data: Dataset, spec: TrainSpec, lam: float) -> HovrSpec:
    return HovrSpec(k=spec.k, q=spec.q, lam=lam, domain=data.domain,
                    mc_samples=spec.mc_samples)


def _robust_loss_grad_fn(data: Dataset, arch: MlpArchitecture, spec: TrainSpec,
                         keep=None):
    """Tape gradient of a mean pointwise loss of the residuals."""
    X = data.X if keep is None else data.X[keep]
    y = data.y if keep is None else data.y[keep]
    n = X.shape[0]

    def grad_fn(theta, t):
        tape = Tape()
        th = tape.leaf(theta)
        out, _ = mlp_value_chain(unflatten(th, arch), X, arch.activation)
        r = tape.const(y[:, None]) - out
        if spec.loss in ("huber", "linear_huber"):
            per = r.huber(spec.huber_delta)
        elif spec.loss == "tukey":
            per = r.tukey(spec.tukey_c)
        else:
            per = r.abs_pow(2.0)
        loss = per.sum() * (1.0 / n)
        tape.backward(loss)
        return np.asarray(th.grad, dtype=np.float64)

    return grad_fn


def _fit_pointwise(data: Dataset, spec: TrainSpec, seed: int) -> FitResult:
    arch = spec.arch_for(data.dim)
    theta0 = model.init(arch, seed)
    schedule = Schedule(spec.schedule, spec.base_rate, spec.gamma, spec.period)
    theta = adam_minimize(_robust_loss_grad_fn(data, arch, spec), theta0,
                          schedule, spec.iterations)
    return FitResult(theta, arch)


def _fit_ransac(data: Dataset, spec: TrainSpec, seed: int) -> FitResult:
    """Iterative trimming: each phase drops the current top-loss decile of
    the full training set, trains on the rest, then re-scores everything."""
    arch = spec.arch_for(data.dim)
    theta = model.init(arch, seed)
    schedule = Schedule(spec.schedule, spec.base_rate, spec.gamma, spec.period)
    n_drop = int(np.ceil(spec.ransac_drop * data.n))
    done = 0
    while done < spec.iterations:
        span = min(spec.ransac_phase, spec.iterations - done)
        r = data.y - model.predict(theta, arch, data.X)
        keep = np.sort(np.argsort(np.abs(r), kind="stable")[: data.n - n_drop])
        grad_fn = _robust_loss_grad_fn(data, arch, replace(spec, loss="mse"), keep)
        phase_schedule = Schedule("constant", max(schedule.rate(done), 1e-12))
        theta = adam_minimize(grad_fn, theta, phase_schedule, span)
        done += span
    return FitResult(theta, arch)


def fit(data: Dataset, spec: TrainSpec, seed: int) -> FitResult:
    """Train per the spec and return the flat parameters."""
    if spec.loss in ("mse", "huber", "tukey", "linear_huber"):
        return _fit_pointwise(data, spec, seed)
    if spec.loss == "ransac":
        return _fit_ransac(data, spec, seed)

    arch = spec.arch_for(data.dim)
    lam = 0.0 if spec.loss == "trimmed_only" else spec.lam
    h = data.n if spec.loss == "hovr_only" else h_from_fraction(data.n, spec.h_fraction)
    trim = TrimSpec(h)
    hovr_spec = _hovr_spec_for(data, spec, lam)
    theta0 = model.init(arch, seed)
    if spec.xi_init == "inner":
        # start at the partial minimizer in xi: trimming is active from step 0
        r0 = data.y - model.predict(theta0, arch, data.X)
        xi0, _ = inner_min_xi(r0, h)
    elif spec.xi_init == "zero":
        xi0 = np.zeros(data.n)
    else:
        raise ValueError(f"unknown xi_init {spec.xi_init!r}")
    state = AugmentedState(theta0, xi0)
    if spec.optimizer == "adam":
        report = run_adam_artl(state, data, arch, trim, hovr_spec,
                               base_rate=spec.base_rate, gamma=spec.gamma,
                               period=spec.period, iterations=spec.iterations,
                               seed=seed, criticality_every=spec.criticality_every,
                               criticality_samples=spec.criticality_samples)
    elif spec.optimizer == "sgsd":
        schedule = Schedule(spec.schedule, spec.base_rate, spec.gamma, spec.period)
        report = run_sgsd(state, data, arch, trim, hovr_spec, schedule,
                          spec.iterations, seed,
                          criticality_every=spec.criticality_every,
                          criticality_samples=spec.criticality_samples)
    else:
        raise ValueError(f"unknown optimizer {spec.optimizer!r}")
    return FitResult(report.final_state.theta, arch, report)


def nn_huber(data: Dataset, spec: TrainSpec, seed: int) -> FitResult:
    return fit(data, replace(spec, loss="huber"), seed)


def nn_tukey(data: Dataset, spec: TrainSpec, seed: int) -> FitResult:
    return fit(data, replace(spec, loss="tukey"), seed)


def nn_ransac(data: Dataset, spec: TrainSpec, seed: int) -> FitResult:
    return fit(data, replace(spec, loss="ransac"), seed)


def linear_huber(data: Dataset, spec: TrainSpec, seed: int) -> FitResult:
    return fit(data, replace(spec, loss="linear_huber"), seed)


def breakdown_stress(trainer: TrainSpec, clean: Dataset, m: int,
                     magnitude: float, seed: int,
                     hov_grid: int = 120) -> tuple[float, float]:
    """Train on clean data and on a copy with m targets replaced by
    `magnitude`; return the integrated variation of both fits."""
    if m > clean.n:
        raise ValueError(f"m={m} exceeds dataset size {clean.n}")
    rng = np.random.default_rng((seed, 0xBAD))
    y = clean.y.copy()
    mask = clean.outlier_mask.copy()
    if m > 0:
        idx = rng.choice(clean.n, size=m, replace=False)
        y[idx] = magnitude
        mask[idx] = True
    dirty = replace(clean, y=y, outlier_mask=mask)

    fit_clean = fit(clean, trainer, seed)
    fit_dirty = fit(dirty, trainer, seed)
    measure = HovrSpec(k=trainer.k, q=trainer.q, lam=0.0, domain=clean.domain)
    hov_clean = quad_hovr(fit_clean.theta, fit_clean.arch, measure, hov_grid)
    hov_dirty = quad_hovr(fit_dirty.theta, fit_dirty.arch, measure, hov_grid)
    return hov_dirty, hov_clean
