import math

import numpy as np
import pytest

from artl.data import (Dataset, SyntheticSpec, destandardize_covariates,
                       destandardize_targets, dump_dataset, load_benchmark,
                       make_synthetic, make_test_set, split_and_contaminate,
                       true_function)

TWO_PI = 2.0 * math.pi


def test_true_function_values():
    assert true_function("checkered", [math.pi / 4, 0.0]) == pytest.approx(1.0)
    assert true_function("volcano", [math.pi + 1.0, math.pi]) == pytest.approx(1.0)
    assert true_function("plane", [2.0, 3.0]) == pytest.approx(-1.0)
    assert true_function("stripe", [math.pi / 8, math.pi / 8]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        true_function("spiral", [0.0, 0.0])


def test_grid_corners_and_spacing():
    data = make_synthetic(SyntheticSpec("plane", 100, seed=0))
    assert any(np.allclose(row, [0.0, 0.0]) for row in data.X)
    assert any(np.allclose(row, [TWO_PI, TWO_PI]) for row in data.X)
    xs = np.unique(data.X[:, 0])
    gaps = np.diff(xs)
    assert np.all(np.abs(gaps - gaps[0]) <= 1e-12)


def test_outlier_count_three_percent_of_hundred():
    data = make_synthetic(SyntheticSpec("checkered", 100, outlier_fraction=0.03, seed=1))
    assert int(data.outlier_mask.sum()) == 3
    assert np.all(np.abs(data.y[data.outlier_mask] - 5.0) <= 0.1)


def test_outlier_count_rounds_half_up():
    d1 = make_synthetic(SyntheticSpec("plane", 100, outlier_fraction=0.024, seed=0))
    assert int(d1.outlier_mask.sum()) == 2
    d2 = make_synthetic(SyntheticSpec("plane", 100, outlier_fraction=0.025, seed=0))
    assert int(d2.outlier_mask.sum()) == 3


def test_noiseless_data_matches_function():
    data = make_synthetic(SyntheticSpec("checkered", 49, noise_sd=0.0,
                                        outlier_fraction=0.0, seed=0))
    want = np.array([true_function("checkered", x) for x in data.X])
    assert np.array_equal(data.y, want)
    assert not data.outlier_mask.any()


def test_synthetic_deterministic():
    a = make_synthetic(SyntheticSpec("volcano", 100, seed=7))
    b = make_synthetic(SyntheticSpec("volcano", 100, seed=7))
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.outlier_mask, b.outlier_mask)


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec("plane", 99)
    with pytest.raises(ValueError):
        SyntheticSpec("plane", 100, outlier_fraction=0.6)


def test_test_set_noiseless():
    t = make_test_set("plane", 500, 3)
    want = t.X[:, 0] - t.X[:, 1]
    assert np.allclose(t.y, want)


# ---------------------------------------------------------------- benchmark

def _write_csv(path, rows, header):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def test_load_benchmark_drops_and_standardizes(tmp_path):
    rng = np.random.default_rng(0)
    header = ["mpg", "cylinders", "displacement", "horsepower", "weight",
              "acceleration", "origin", "car_name"]
    rows = []
    for i in range(40):
        hp = "?" if i in (3, 17) else f"{rng.uniform(50, 200):.1f}"
        rows.append([f"{rng.uniform(10, 40):.2f}", rng.integers(3, 9),
                     f"{rng.uniform(70, 400):.1f}", hp,
                     f"{rng.uniform(1500, 5000):.0f}", f"{rng.uniform(8, 25):.1f}",
                     rng.integers(1, 4), f"car_{i}"])
    path = tmp_path / "auto.csv"
    _write_csv(path, rows, header)

    data = load_benchmark(path, ["origin", "car_name"], "mpg")
    assert data.n == 38  # two '?' rows dropped
    assert data.dim == 5
    assert abs(data.X.mean()) <= 1e-10
    assert np.allclose(data.X.std(axis=0), 1.0)
    assert abs(float(data.y.mean())) <= 1e-10
    assert float(data.y.std()) == pytest.approx(1.0)


def test_load_benchmark_schema_errors(tmp_path):
    path = tmp_path / "bad.csv"
    _write_csv(path, [[1, 2]], ["a", "b"])
    with pytest.raises(ValueError):
        load_benchmark(path, [], "missing")
    path2 = tmp_path / "empty.csv"
    _write_csv(path2, [["x", "y"]], ["a", "b"])  # only non-numeric rows
    with pytest.raises(ValueError):
        load_benchmark(path2, [], "a")


def test_load_benchmark_single_row(tmp_path):
    path = tmp_path / "one.csv"
    _write_csv(path, [[1.0, 2.0, 3.0]], ["a", "b", "y"])
    data = load_benchmark(path, [], "y")
    assert data.n == 1 and data.dim == 2


def test_standardization_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    rows = [[f"{rng.uniform(0, 100):.6f}", f"{rng.uniform(-5, 5):.6f}",
             f"{rng.uniform(10, 20):.6f}"] for _ in range(25)]
    path = tmp_path / "r.csv"
    _write_csv(path, rows, ["a", "b", "y"])
    data = load_benchmark(path, [], "y")
    raw = np.array([[float(v) for v in row] for row in rows])
    assert np.allclose(destandardize_covariates(data, data.X), raw[:, :2], atol=1e-10)
    assert np.allclose(destandardize_targets(data, data.y), raw[:, 2], atol=1e-10)


# -------------------------------------------------------------------- split

def _toy_dataset(n, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + rng.normal(0, 0.1, n)
    from artl.model import DomainBox
    return Dataset(X, y, np.zeros(n, dtype=bool), DomainBox.from_points(X), "toy")


def test_split_sizes_match_half_up_rule():
    data = _toy_dataset(398)
    train, test = split_and_contaminate(data, 0.7, 0.0, 2.0, 0)
    assert train.n == 279
    assert test.n == 119


def test_split_no_contamination_keeps_targets():
    data = _toy_dataset(50)
    train, test = split_and_contaminate(data, 0.8, 0.0, 2.0, 1)
    assert not train.outlier_mask.any()
    joined = np.sort(np.concatenate([train.y, test.y]))
    assert np.allclose(joined, np.sort(data.y))


def test_contamination_shifts_by_two_standard_deviations():
    data = _toy_dataset(100)
    train, _ = split_and_contaminate(data, 0.7, 0.05, 2.0, 2)
    clean_train, _ = split_and_contaminate(data, 0.7, 0.0, 2.0, 2)
    assert int(train.outlier_mask.sum()) == round(0.05 * 70 + 0.5)
    moved = train.outlier_mask
    sd = float(np.std(clean_train.y))
    delta = train.y[moved] - clean_train.y[moved]
    assert np.allclose(delta, 2.0 * sd)


def test_split_validation():
    with pytest.raises(ValueError):
        split_and_contaminate(_toy_dataset(10), 1.0, 0.0, 2.0, 0)


# --------------------------------------------------------------------- dump

def test_dump_dataset(tmp_path):
    data = make_synthetic(SyntheticSpec("plane", 9, noise_sd=0.0,
                                        outlier_fraction=0.0, seed=0))
    path = tmp_path / "d.csv"
    dump_dataset(path, data)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "x_1,x_2,y,is_outlier"
    assert len(lines) == 10
