"""Dataset construction: synthetic surfaces with injected outliers, and
benchmark CSV ingestion with standardization.

Synthetic data lives on an inclusive uniform grid over [0, 2*pi]^2 with
Gaussian noise; a chosen fraction of targets is replaced by a large level
plus small jitter and flagged in the outlier mask. Counts derived from
fractions always round half-up.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .losses import round_half_up
from .model import DomainBox

TWO_PI = 2.0 * math.pi

_TRUE_FUNCTIONS = {
    "checkered": lambda x1, x2: np.sin(2.0 * x1) * np.cos(2.0 * x2),
    "volcano": lambda x1, x2: np.exp(-((x1 - math.pi) ** 2 + (x2 - math.pi) ** 2 - 1.0) ** 2),
    "stripe": lambda x1, x2: np.sin(2.0 * (x1 + x2)),
    "plane": lambda x1, x2: x1 - x2,
}


@dataclass(frozen=True)
class Dataset:
    """Covariates, targets, outlier provenance and the covariate domain."""

    X: np.ndarray
    y: np.ndarray
    outlier_mask: np.ndarray
    domain: DomainBox
    provenance: str = ""
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_mean: float | None = None
    y_scale: float | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    function: str = "checkered"
    n: int = 100
    noise_sd: float = 0.2
    outlier_fraction: float = 0.03
    outlier_level: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.function not in _TRUE_FUNCTIONS:
            raise ValueError(f"unknown function {self.function!r}; "
                             f"choose from {sorted(_TRUE_FUNCTIONS)}")
        side = math.isqrt(self.n)
        if side * side != self.n:
            raise ValueError(f"n must be a perfect square for the grid, got {self.n}")
        if not 0.0 <= self.outlier_fraction < 0.5:
            raise ValueError(f"outlier_fraction must be in [0, 0.5), got {self.outlier_fraction}")


def true_function(name: str, x) -> float:
    if name not in _TRUE_FUNCTIONS:
        raise ValueError(f"unknown function {name!r}; choose from {sorted(_TRUE_FUNCTIONS)}")
    x = np.asarray(x, dtype=np.float64)
    return float(_TRUE_FUNCTIONS[name](x[..., 0], x[..., 1]))


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    """Grid data over [0, 2*pi]^2 with noise and injected outliers."""
    side = math.isqrt(spec.n)
    axis = np.linspace(0.0, TWO_PI, side)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    X = np.stack([g1.ravel(), g2.ravel()], axis=1)
    f = _TRUE_FUNCTIONS[spec.function](X[:, 0], X[:, 1])

    rng = np.random.default_rng(spec.seed)
    y = f + (rng.normal(0.0, spec.noise_sd, spec.n) if spec.noise_sd > 0 else 0.0)
    mask = np.zeros(spec.n, dtype=bool)
    count = round_half_up(spec.outlier_fraction * spec.n)
    if count > 0:
        idx = rng.choice(spec.n, size=count, replace=False)
        y = np.asarray(y, dtype=np.float64)
        y[idx] = spec.outlier_level + rng.uniform(-0.1, 0.1, count)
        mask[idx] = True
    prov = (f"synthetic:{spec.function}:n={spec.n}:noise={spec.noise_sd}"
            f":frac={spec.outlier_fraction}:seed={spec.seed}")
    return Dataset(X, np.asarray(y, dtype=np.float64), mask,
                   DomainBox((0.0, 0.0), (TWO_PI, TWO_PI)), prov)


def make_test_set(function: str, n_test: int, seed: int) -> Dataset:
    """Uniform random covariates with noiseless targets, for PMSE."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, TWO_PI, size=(n_test, 2))
    y = _TRUE_FUNCTIONS[function](X[:, 0], X[:, 1])
    return Dataset(X, y, np.zeros(n_test, dtype=bool),
                   DomainBox((0.0, 0.0), (TWO_PI, TWO_PI)),
                   f"test:{function}:n={n_test}:seed={seed}")


def load_benchmark(csv_path, drop_columns, target_column: str) -> Dataset:
    """Read a CSV benchmark, drop named columns, keep fully numeric rows,
    and standardize covariates and target to zero mean / unit variance."""
    df = pd.read_csv(csv_path)
    if target_column not in df.columns:
        raise ValueError(f"target column {target_column!r} not found in {csv_path}")
    df = df.drop(columns=[c for c in drop_columns if c in df.columns])
    df = df.apply(pd.to_numeric, errors="coerce").dropna(axis=0)
    if len(df) == 0:
        raise ValueError(f"no usable numeric rows in {csv_path}")

    y_raw = df[target_column].to_numpy(dtype=np.float64)
    X_raw = df.drop(columns=[target_column]).to_numpy(dtype=np.float64)
    x_mean, x_scale = X_raw.mean(axis=0), X_raw.std(axis=0)
    y_mean, y_scale = float(y_raw.mean()), float(y_raw.std())
    if np.any(x_scale == 0.0) or (y_scale == 0.0 and len(df) > 1):
        x_scale = np.where(x_scale == 0.0, 1.0, x_scale)
        y_scale = y_scale if y_scale > 0.0 else 1.0
    if len(df) == 1:
        x_scale = np.ones_like(x_mean)
        y_scale = 1.0
    X = (X_raw - x_mean) / x_scale
    y = (y_raw - y_mean) / y_scale
    return Dataset(X, y, np.zeros(len(df), dtype=bool), DomainBox.from_points(X),
                   f"benchmark:{csv_path}:n={len(df)}:J={X.shape[1]}",
                   x_mean, x_scale, y_mean, y_scale)


def destandardize_targets(data: Dataset, y: np.ndarray) -> np.ndarray:
    if data.y_mean is None or data.y_scale is None:
        return np.asarray(y, dtype=np.float64)
    return np.asarray(y, dtype=np.float64) * data.y_scale + data.y_mean


def destandardize_covariates(data: Dataset, X: np.ndarray) -> np.ndarray:
    if data.x_mean is None or data.x_scale is None:
        return np.asarray(X, dtype=np.float64)
    return np.asarray(X, dtype=np.float64) * data.x_scale + data.x_mean


def split_and_contaminate(data: Dataset, train_fraction: float,
                          outlier_fraction: float, shift_multiplier: float,
                          seed: int) -> tuple[Dataset, Dataset]:
    """Random train/test split; shifts a fraction of training targets by
    shift_multiplier times the training-target standard deviation."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    n = data.n
    perm = rng.permutation(n)
    n_train = round_half_up(train_fraction * n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])

    y_train = data.y[train_idx].copy()
    mask_train = data.outlier_mask[train_idx].copy()
    count = round_half_up(outlier_fraction * n_train)
    if count > 0:
        sd = float(np.std(y_train))
        sel = rng.choice(n_train, size=count, replace=False)
        y_train[sel] += shift_multiplier * sd
        mask_train[sel] = True

    def _sub(idx, y, mask, tag):
        X = data.X[idx]
        return Dataset(X, y, mask, DomainBox.from_points(X),
                       f"{data.provenance}:{tag}:seed={seed}",
                       data.x_mean, data.x_scale, data.y_mean, data.y_scale)

    train = _sub(train_idx, y_train, mask_train, "train")
    test = _sub(test_idx, data.y[test_idx].copy(),
                data.outlier_mask[test_idx].copy(), "test")
    return train, test


def dump_dataset(path, data: Dataset) -> None:
    """CSV dump: x_1..x_J, y, is_outlier."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{j + 1}" for j in range(data.dim)] + ["y", "is_outlier"])
        for i in range(data.n):
            writer.writerow([repr(float(v)) for v in data.X[i]]
                            + [repr(float(data.y[i])), int(data.outlier_mask[i])])
