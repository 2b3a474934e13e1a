import numpy as np
import pytest

from artl.hovr import (HovrSpec, basis_model_hov, diagonal_weights,
                       mc_hovr_grad, quad_hovr)
from artl.model import DomainBox, MlpArchitecture, init

TWO_PI = 2.0 * np.pi
BOX = DomainBox((0.0, 0.0), (TWO_PI, TWO_PI))


def rand_theta(arch, seed, scale=0.6):
    rng = np.random.default_rng(seed)
    return init(arch, seed) + scale * rng.standard_normal(arch.param_count())


def spec_for(k, q=2.0, lam=1e-3, M=64, box=BOX):
    return HovrSpec(k=k, q=q, lam=lam, domain=box, mc_samples=M)


# ------------------------------------------------------------- validation

def test_spec_validation():
    with pytest.raises(ValueError):
        HovrSpec(k=3, q=2.0, lam=0.0, domain=BOX)
    with pytest.raises(ValueError):
        HovrSpec(k=1, q=0.0, lam=0.0, domain=BOX)
    with pytest.raises(ValueError):
        HovrSpec(k=1, q=2.0, lam=-1.0, domain=BOX)
    with pytest.raises(ValueError):
        HovrSpec(k=1, q=2.0, lam=0.0, domain=BOX, mc_samples=0)
    with pytest.raises(ValueError):
        HovrSpec(k=1, q=2.0, lam=0.0, domain=BOX,
                 weights=(((1,), 0.5), ((2,), 0.6)))
    with pytest.raises(ValueError):
        HovrSpec(k=2, q=2.0, lam=0.0, domain=BOX, weights=(((1,), 1.0),))


def test_diagonal_weights_default():
    spec = spec_for(2)
    assert spec.weights == (((1, 1), 0.5), ((2, 2), 0.5))
    assert diagonal_weights(3, 1) == (((1,), 1 / 3), ((2,), 1 / 3), ((3,), 1 / 3))


# ------------------------------------------------------------ degenerate

def test_constant_network_zero_estimate():
    arch = MlpArchitecture(2, (5,))
    theta = init(arch, 0)
    theta[:10] = 0.0  # zero first-layer weights
    est, grad = mc_hovr_grad(theta, arch, spec_for(1), np.random.default_rng(0))
    assert est == 0.0
    assert np.all(grad == 0.0)
    assert quad_hovr(theta, arch, spec_for(1), 30) == 0.0


def test_linear_model_exact_value():
    # f(x) = x1 on [0, 2pi]^2; k=1, q=2, uniform weights:
    # C = (1/2) integral(1) + (1/2) integral(0) = 2 pi^2
    arch = MlpArchitecture(2, ())
    theta = np.array([1.0, 0.0, 0.0])
    exact = 2.0 * np.pi ** 2
    est, _ = mc_hovr_grad(theta, arch, spec_for(1, M=1000), np.random.default_rng(1))
    assert abs(est - exact) <= 1e-9
    assert abs(quad_hovr(theta, arch, spec_for(1), 50) - exact) <= 1e-9
    # basis {x1, x2, 1} matches the linear-model layout; gram of the
    # weighted first-derivative inner products is (vol/2) diag(1, 1, 0)
    G = 0.5 * BOX.volume() * np.diag([1.0, 1.0, 0.0])
    assert abs(basis_model_hov(G, theta) - exact) <= 1e-9


def test_quad_errors():
    arch = MlpArchitecture(4, (3,))
    theta = init(arch, 0)
    box4 = DomainBox((0.0,) * 4, (1.0,) * 4)
    with pytest.raises(ValueError):
        quad_hovr(theta, arch, HovrSpec(k=1, q=2.0, lam=0.0, domain=box4), 10)
    arch2 = MlpArchitecture(2, (3,))
    with pytest.raises(ValueError):
        quad_hovr(init(arch2, 0), arch2, spec_for(1), 1)


def test_quad_grid_convergence():
    arch = MlpArchitecture(2, (8, 6))
    theta = rand_theta(arch, 1, scale=1.2)
    spec = spec_for(2)
    coarse = quad_hovr(theta, arch, spec, 50)
    fine = quad_hovr(theta, arch, spec, 200)
    assert abs(coarse - fine) <= 1e-3 * abs(fine)


# ----------------------------------------------------------- unbiasedness

@pytest.mark.parametrize("k", [1, 2])
def test_mc_matches_quadrature(k):
    arch = MlpArchitecture(2, (8, 6))
    theta = rand_theta(arch, 3)
    spec = spec_for(k, M=1000)
    reference = quad_hovr(theta, arch, spec, 200)
    rng = np.random.default_rng(10 + k)
    batches = np.array([mc_hovr_grad(theta, arch, spec, rng)[0] for _ in range(100)])
    # 10^5 total samples: mean within 3 standard errors, and within 1%
    se = batches.std(ddof=1) / np.sqrt(len(batches))
    assert abs(batches.mean() - reference) <= max(3.0 * se, 1e-12)
    assert abs(batches.mean() - reference) <= 0.01 * reference


@pytest.mark.parametrize("k", [1, 2])
def test_mc_unbiased_over_200_batches(k):
    arch = MlpArchitecture(2, (6, 5))
    theta = rand_theta(arch, 4)
    spec = spec_for(k, M=256)
    reference = quad_hovr(theta, arch, spec, 150)
    rng = np.random.default_rng(20 + k)
    batches = np.array([mc_hovr_grad(theta, arch, spec, rng)[0] for _ in range(200)])
    se = batches.std(ddof=1) / np.sqrt(len(batches))
    assert abs(batches.mean() - reference) <= 4.0 * se


def test_mc_gradient_unbiased_against_quad_finite_differences():
    arch = MlpArchitecture(2, (6, 5))
    theta = rand_theta(arch, 5)
    spec = spec_for(1, M=10000)
    rng_g = np.random.default_rng(77)
    grads = np.zeros((100, theta.shape[0]))
    for b in range(100):
        _, grads[b] = mc_hovr_grad(theta, arch, spec, rng_g)
    gmean = grads.mean(axis=0)  # 10^6 total samples

    coords = np.random.default_rng(8).choice(theta.shape[0], 10, replace=False)
    eps = 1e-5
    for i in coords:
        tp, tm = theta.copy(), theta.copy()
        tp[i] += eps
        tm[i] -= eps
        fd = (quad_hovr(tp, arch, spec, 150) - quad_hovr(tm, arch, spec, 150)) / (2 * eps)
        denom = max(abs(fd), 1e-2 * np.abs(gmean[coords]).max())
        assert abs(gmean[i] - fd) <= 0.02 * denom


def test_output_scaling_power_law():
    arch = MlpArchitecture(2, (7, 5))
    theta = rand_theta(arch, 6)
    spec = spec_for(2)
    base = quad_hovr(theta, arch, spec, 80)
    for c in (2.0, -3.0, 0.5):
        scaled = theta.copy()
        scaled[-(5 + 1):] *= c  # final layer weights and bias
        got = quad_hovr(scaled, arch, spec, 80)
        assert got == pytest.approx(abs(c) ** 2 * base, rel=1e-9)


def test_estimates_nonnegative():
    arch = MlpArchitecture(2, (5,))
    rng = np.random.default_rng(9)
    for trial in range(10):
        theta = rand_theta(arch, trial)
        est, _ = mc_hovr_grad(theta, arch, spec_for(1, q=1.5, M=32), rng)
        assert est >= 0.0


# ------------------------------------------------------------ basis oracle

def test_basis_identity_gram_is_ridge():
    theta = np.array([1.0, -2.0, 0.5])
    assert basis_model_hov(np.eye(3), theta) == pytest.approx(float(theta @ theta))


def test_basis_zero_theta():
    assert basis_model_hov(np.eye(4), np.zeros(4)) == 0.0


def test_basis_monomial_example():
    # basis {1, x, x^2} on [0,1], k=1: G = [[0,0,0],[0,1,1],[0,1,4/3]]
    G = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 1.0, 4.0 / 3.0]])
    assert basis_model_hov(G, np.array([0.0, 1.0, 1.0])) == pytest.approx(13.0 / 3.0)


def test_basis_asymmetric_rejected():
    G = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        basis_model_hov(G, np.ones(2))
