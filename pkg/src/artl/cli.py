"""Config-driven experiment runner.

Configs are flat `key = value` lines with dotted namespaces (for example
`hovr.k = 2`); `#` starts a comment. The `run` subcommand executes one
experiment over all seeds and writes CSV results into the output
directory. Exit codes: 0 success, 2 bad config, 3 training divergence
(partial results are kept).

Every result CSV carries a hash of the resolved config, and timing goes
to a separate file so re-running an identical config reproduces the
result files byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import evaluate, model
from .autodiff import TapeOverflowError
from .data import (TWO_PI, Dataset, SyntheticSpec, load_benchmark,
                   make_synthetic, make_test_set, split_and_contaminate)
from .evaluate import TrainSpec, correlations, fit, pmse, robust_validation_score
from .losses import h_from_fraction
from .model import DomainBox
from .optimizer import DivergenceError

EXPERIMENTS = ("single", "synthetic_table", "ablation", "validation_study",
               "benchmark", "breakdown")
ABLATION_ARMS = ("ttl_hovr", "ttl_only", "hovr_only")
_TEST_STREAM, _SPLIT_STREAM = 0x7E57, 0x59171


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Resolved experiment configuration (defaults mirror the standard
    synthetic setup: 3x100 sigmoid net, Adam 0.01 with step decay, 5000
    iterations, lambda 1e-3, q 2, h fraction 0.9, diagonal weights)."""

    experiment: str = "single"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    output_dir: str = "runs/out"
    # dataset
    dataset_kind: str = "synthetic"
    function: str = "checkered"
    n: int = 100
    noise_sd: float = 0.2
    outlier_fraction: float = 0.03
    outlier_level: float = 5.0
    n_test: int = 10000
    csv_path: str = ""
    drop_columns: tuple[str, ...] = ()
    target_column: str = ""
    train_fraction: float = 0.7
    contamination: float = 0.05
    shift_multiplier: float = 2.0
    # model
    widths: tuple[int, ...] = (100, 100, 100)
    activation: str = "sigmoid"
    # loss
    loss: str = "artl"
    h_fraction: float = 0.9
    huber_delta: float = 1.0
    tukey_c: float = 4.685
    # penalty
    k: int = 2
    q: float = 2.0
    lam: float = 1e-3
    mc_samples: int = 64
    # optimizer
    optimizer: str = "adam"
    base_rate: float = 0.01
    schedule: str = "step_decay"
    gamma: float = 0.5
    period: int = 1000
    iterations: int = 5000
    criticality_every: int = 0
    # experiment specifics
    methods: tuple[str, ...] = ("artl_k1", "artl_k2", "nn_huber", "nn_tukey",
                                "nn_ransac", "linear_huber")
    val_fraction: float = 0.2
    validation_lambdas: tuple[float, ...] = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)
    validation_ks: tuple[int, ...] = (1, 2)
    breakdown_m: int = -1
    breakdown_magnitude: float = 1e6
    grid_resolution: int = 61


def _parse_int_tuple(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _parse_float_tuple(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _parse_str_tuple(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


_KEY_MAP = {
    "experiment": ("experiment", str),
    "seeds": ("seeds", _parse_int_tuple),
    "output_dir": ("output_dir", str),
    "dataset.kind": ("dataset_kind", str),
    "dataset.function": ("function", str),
    "dataset.n": ("n", int),
    "dataset.noise_sd": ("noise_sd", float),
    "dataset.outlier_fraction": ("outlier_fraction", float),
    "dataset.outlier_level": ("outlier_level", float),
    "dataset.n_test": ("n_test", int),
    "dataset.csv_path": ("csv_path", str),
    "dataset.drop_columns": ("drop_columns", _parse_str_tuple),
    "dataset.target_column": ("target_column", str),
    "dataset.train_fraction": ("train_fraction", float),
    "dataset.contamination": ("contamination", float),
    "dataset.shift_multiplier": ("shift_multiplier", float),
    "model.widths": ("widths", _parse_int_tuple),
    "model.activation": ("activation", str),
    "loss": ("loss", str),
    "loss.h_fraction": ("h_fraction", float),
    "loss.huber_delta": ("huber_delta", float),
    "loss.tukey_c": ("tukey_c", float),
    "hovr.k": ("k", int),
    "hovr.q": ("q", float),
    "hovr.lambda": ("lam", float),
    "hovr.mc_samples": ("mc_samples", int),
    "optimizer.kind": ("optimizer", str),
    "optimizer.base_rate": ("base_rate", float),
    "optimizer.schedule": ("schedule", str),
    "optimizer.gamma": ("gamma", float),
    "optimizer.period": ("period", int),
    "optimizer.iterations": ("iterations", int),
    "optimizer.criticality_every": ("criticality_every", int),
    "methods": ("methods", _parse_str_tuple),
    "validation.fraction": ("val_fraction", float),
    "validation.lambdas": ("validation_lambdas", _parse_float_tuple),
    "validation.ks": ("validation_ks", _parse_int_tuple),
    "breakdown.m": ("breakdown_m", int),
    "breakdown.magnitude": ("breakdown_magnitude", float),
    "grid.resolution": ("grid_resolution", int),
}

_METHOD_TOKENS = ("artl", "artl_k1", "artl_k2", "ttl_hovr", "ttl_only",
                  "hovr_only", "nn_mse", "nn_huber", "nn_tukey", "nn_ransac",
                  "linear_huber")


def parse_config(path) -> RunConfig:
    """Parse a key = value config file with line-precise errors."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _KEY_MAP:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        field_name, conv = _KEY_MAP[key]
        try:
            values[field_name] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    try:
        cfg = RunConfig(**values)
        _validate(cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; choose from {EXPERIMENTS}")
    if not cfg.seeds:
        raise ConfigError("need at least one seed")
    if cfg.loss == "artl" and not (cfg.lam > 0.0 and cfg.h_fraction < 1.0):
        raise ConfigError("loss=artl requires hovr.lambda > 0 and loss.h_fraction < 1")
    for tok in cfg.methods:
        if tok not in _METHOD_TOKENS:
            raise ConfigError(f"unknown method {tok!r}; choose from {_METHOD_TOKENS}")
    if cfg.experiment == "benchmark":
        if cfg.dataset_kind != "benchmark" or not cfg.csv_path or not cfg.target_column:
            raise ConfigError("benchmark experiment needs dataset.kind=benchmark, "
                              "dataset.csv_path and dataset.target_column")
    if cfg.experiment == "validation_study":
        if len(cfg.validation_lambdas) * len(cfg.validation_ks) < 2:
            raise ConfigError("validation grid needs at least two configurations")
    # loss-family invariants are enforced by TrainSpec construction
    try:
        _base_spec(cfg)
        if cfg.experiment in ("synthetic_table", "benchmark"):
            for tok in cfg.methods:
                _spec_for_method(cfg, tok)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_hash(cfg: RunConfig) -> str:
    canon = "\n".join(f"{f.name}={getattr(cfg, f.name)!r}" for f in fields(cfg))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def _base_spec(cfg: RunConfig) -> TrainSpec:
    if cfg.loss not in evaluate.ARTL_FAMILY + evaluate.BASELINES:
        raise ConfigError(f"unknown loss {cfg.loss!r}")
    return TrainSpec(loss=cfg.loss,
                     widths=cfg.widths, activation=cfg.activation,
                     h_fraction=cfg.h_fraction, k=cfg.k, lam=cfg.lam, q=cfg.q,
                     mc_samples=cfg.mc_samples, optimizer=cfg.optimizer,
                     base_rate=cfg.base_rate, schedule=cfg.schedule,
                     gamma=cfg.gamma, period=cfg.period,
                     iterations=cfg.iterations, huber_delta=cfg.huber_delta,
                     tukey_c=cfg.tukey_c, criticality_every=cfg.criticality_every)


def _spec_for_method(cfg: RunConfig, token: str) -> TrainSpec:
    base = _base_spec(cfg)
    table = {
        "artl": {"loss": "artl"},
        "artl_k1": {"loss": "artl", "k": 1},
        "artl_k2": {"loss": "artl", "k": 2},
        "ttl_hovr": {"loss": "artl"},
        "ttl_only": {"loss": "trimmed_only"},
        "hovr_only": {"loss": "hovr_only"},
        "nn_mse": {"loss": "mse"},
        "nn_huber": {"loss": "huber"},
        "nn_tukey": {"loss": "tukey"},
        "nn_ransac": {"loss": "ransac"},
        "linear_huber": {"loss": "linear_huber"},
    }
    return replace(base, **table[token])


def dump_grid(theta: np.ndarray, arch, resolution: int, domain, path) -> None:
    """CSV of (x1, x2, f) over an inclusive resolution^2 grid."""
    if arch.input_dim != 2 or domain.dim != 2:
        raise ValueError("grid dumps need a 2-D input domain")
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    axes = [np.linspace(domain.lo[j], domain.hi[j], resolution) for j in range(2)]
    g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    X = np.stack([g1.ravel(), g2.ravel()], axis=1)
    f = model.predict(theta, arch, X)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "f"])
        for row in zip(X[:, 0], X[:, 1], f):
            writer.writerow([repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# experiment bodies: each task trains one (method-like label, seed) cell


def _synthetic_train(cfg: RunConfig, seed: int) -> Dataset:
    return make_synthetic(SyntheticSpec(cfg.function, cfg.n, cfg.noise_sd,
                                        cfg.outlier_fraction, cfg.outlier_level, seed))


def _synthetic_task(args):
    cfg, token, seed = args
    t0 = time.perf_counter()
    train = _synthetic_train(cfg, seed)
    test = make_test_set(cfg.function, cfg.n_test, (seed, _TEST_STREAM))
    result = fit(train, _spec_for_method(cfg, token), seed)
    row = {
        "method": token,
        "dataset": cfg.function,
        "seed": seed,
        "pmse": pmse(result.theta, result.arch, test),
        "val_score": robust_validation_score(result.theta, result.arch, train,
                                             cfg.h_fraction),
    }
    return row, time.perf_counter() - t0, result


def _benchmark_task(args):
    cfg, token, seed, data = args
    t0 = time.perf_counter()
    train, test = split_and_contaminate(data, cfg.train_fraction,
                                        cfg.contamination, cfg.shift_multiplier, seed)
    result = fit(train, _spec_for_method(cfg, token), seed)
    row = {
        "method": token,
        "dataset": Path(cfg.csv_path).stem,
        "seed": seed,
        "pmse": pmse(result.theta, result.arch, test),
        "val_score": robust_validation_score(result.theta, result.arch, train,
                                             cfg.h_fraction),
    }
    return row, time.perf_counter() - t0, result


def _validation_task(args):
    cfg, lam, k, seed = args
    t0 = time.perf_counter()
    full = _synthetic_train(cfg, seed)
    train, val = split_and_contaminate(full, 1.0 - cfg.val_fraction, 0.0, 0.0,
                                       (seed, _SPLIT_STREAM))
    test = make_test_set(cfg.function, cfg.n_test, (seed, _TEST_STREAM))
    spec = replace(_base_spec(cfg), loss="artl", lam=lam, k=k)
    result = fit(train, spec, seed)
    row = {
        "method": f"artl_k{k}_lam{lam:g}",
        "dataset": cfg.function,
        "seed": seed,
        "pmse": pmse(result.theta, result.arch, test),
        "val_score": robust_validation_score(result.theta, result.arch, val,
                                             cfg.h_fraction),
    }
    return row, time.perf_counter() - t0, result


def _breakdown_task(args):
    cfg, lam, seed = args
    t0 = time.perf_counter()
    clean = make_synthetic(SyntheticSpec(cfg.function, cfg.n, cfg.noise_sd,
                                         0.0, cfg.outlier_level, seed))
    h = h_from_fraction(cfg.n, cfg.h_fraction)
    m = cfg.breakdown_m if cfg.breakdown_m >= 0 else cfg.n - h
    base = _base_spec(cfg)
    trainer = replace(base, loss="artl" if lam > 0 else "trimmed_only", lam=lam)
    hov_dirty, hov_clean = evaluate.breakdown_stress(trainer, clean, m,
                                                     cfg.breakdown_magnitude, seed)
    row = {
        "method": f"breakdown_lam{lam:g}",
        "dataset": cfg.function,
        "seed": seed,
        "hov_clean": hov_clean,
        "hov_contaminated": hov_dirty,
        "ratio": hov_dirty / hov_clean if hov_clean > 0 else float("inf"),
    }
    return row, time.perf_counter() - t0, None


def _run_tasks(task_fn, arg_list, workers: int):
    if workers <= 1:
        for args in arg_list:
            yield task_fn(args)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(task_fn, arg_list)


def _write_csv(path, rows, columns) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            out = []
            for col in columns:
                v = row[col]
                out.append(repr(float(v)) if isinstance(v, float) else v)
            writer.writerow(out)


def execute(cfg: RunConfig, workers: int = 1) -> int:
    """Run the configured experiment; returns the process exit code."""
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)

    if cfg.experiment == "single":
        token = {"artl": "artl", "trimmed_only": "ttl_only",
                 "hovr_only": "hovr_only", "mse": "nn_mse", "huber": "nn_huber",
                 "tukey": "nn_tukey", "ransac": "nn_ransac",
                 "linear_huber": "linear_huber"}[cfg.loss]
        tokens = (token,)
    elif cfg.experiment == "synthetic_table":
        tokens = cfg.methods
    elif cfg.experiment == "ablation":
        tokens = ABLATION_ARMS
    else:
        tokens = ()

    rows, timings = [], []
    try:
        if cfg.experiment in ("single", "synthetic_table", "ablation"):
            tasks = [(cfg, tok, s) for tok, s in itertools.product(tokens, cfg.seeds)]
            for row, dt, result in _run_tasks(_synthetic_task, tasks, workers):
                rows.append(row)
                timings.append({**{k: row[k] for k in ("method", "dataset", "seed")},
                                "wall_time_s": dt})
                _side_outputs(cfg, outdir, row, result)
        elif cfg.experiment == "benchmark":
            data = load_benchmark(cfg.csv_path, cfg.drop_columns, cfg.target_column)
            tasks = [(cfg, tok, s, data) for tok, s in itertools.product(cfg.methods, cfg.seeds)]
            for row, dt, result in _run_tasks(_benchmark_task, tasks, workers):
                rows.append(row)
                timings.append({**{k: row[k] for k in ("method", "dataset", "seed")},
                                "wall_time_s": dt})
                _side_outputs(cfg, outdir, row, result, grids=False)
        elif cfg.experiment == "validation_study":
            grid = list(itertools.product(cfg.validation_lambdas, cfg.validation_ks))
            tasks = [(cfg, lam, k, s) for (lam, k), s in itertools.product(grid, cfg.seeds)]
            for row, dt, result in _run_tasks(_validation_task, tasks, workers):
                rows.append(row)
                timings.append({**{k: row[k] for k in ("method", "dataset", "seed")},
                                "wall_time_s": dt})
            _write_validation_summary(outdir, rows, chash)
        elif cfg.experiment == "breakdown":
            lams = (cfg.lam, 0.0)
            tasks = [(cfg, lam, s) for lam, s in itertools.product(lams, cfg.seeds)]
            brows = []
            for row, dt, _ in _run_tasks(_breakdown_task, tasks, workers):
                brows.append(row)
                timings.append({**{k: row[k] for k in ("method", "dataset", "seed")},
                                "wall_time_s": dt})
            for row in brows:
                row["config_hash"] = chash
            _write_csv(outdir / "breakdown.csv", brows,
                       ["method", "dataset", "seed", "hov_clean",
                        "hov_contaminated", "ratio", "config_hash"])
    except (DivergenceError, TapeOverflowError) as exc:
        _flush_results(outdir, rows, timings, chash)
        print(f"error: training diverged ({exc}); partial results kept in {outdir}",
              file=sys.stderr)
        return 3

    _flush_results(outdir, rows, timings, chash)
    return 0


def _flush_results(outdir: Path, rows, timings, chash: str) -> None:
    if rows and "pmse" in rows[0]:
        for row in rows:
            row["config_hash"] = chash
        _write_csv(outdir / "results.csv", rows,
                   ["method", "dataset", "seed", "pmse", "val_score", "config_hash"])
    if timings:
        _write_csv(outdir / "timings.csv", timings,
                   ["method", "dataset", "seed", "wall_time_s"])


def _side_outputs(cfg: RunConfig, outdir: Path, row, result, grids=True) -> None:
    tag = f"{row['method']}_{row['seed']}"
    if result.report is not None:
        result.report.to_csv(outdir / f"diag_{tag}.csv")
    if grids and cfg.grid_resolution >= 2 and result.arch.input_dim == 2:
        domain = DomainBox((0.0, 0.0), (TWO_PI, TWO_PI))
        dump_grid(result.theta, result.arch, cfg.grid_resolution, domain,
                  outdir / f"grid_{tag}.csv")


def _write_validation_summary(outdir: Path, rows, chash: str) -> None:
    by_method: dict[str, list] = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row)
    methods = sorted(by_method)
    mean_pmse = [float(np.mean([r["pmse"] for r in by_method[m]])) for m in methods]
    mean_val = [float(np.mean([r["val_score"] for r in by_method[m]])) for m in methods]
    pearson, spearman = correlations(mean_val, mean_pmse)
    srows = [{"n_configs": len(methods), "pearson": pearson,
              "spearman": spearman, "config_hash": chash}]
    _write_csv(outdir / "summary.csv", srows,
               ["n_configs", "pearson", "spearman", "config_hash"])


def run(config_path, seeds=None, output_dir=None, workers=None) -> int:
    """Entry point used by the CLI; returns an exit status."""
    try:
        cfg = parse_config(config_path)
        if seeds is not None:
            cfg = replace(cfg, seeds=tuple(seeds))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        _validate(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if workers is None:
        workers = int(os.environ.get("ARTL_WORKERS", "1"))
    return execute(cfg, workers=workers)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="artl",
                                     description="trimmed-loss robust MLP experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run an experiment from a config file")
    runp.add_argument("config")
    runp.add_argument("--seeds", type=_parse_int_tuple, default=None,
                      help="comma-separated seed override")
    runp.add_argument("--output-dir", default=None)
    runp.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.seeds, args.output_dir, args.workers)
    return 2


if __name__ == "__main__":
    sys.exit(main())
