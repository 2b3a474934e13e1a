import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artl.jets import (CrossJet, Jet1, Jet2, hovr_term_grad, input_derivative,
                       jet_forward, jet_stack_outputs, mlp_forward_parts,
                       act_derivative_factors, mlp_jet_batch)
from artl.model import MlpArchitecture, forward, init, unflatten

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def rand_theta(arch, seed, scale=0.7):
    rng = np.random.default_rng(seed)
    return init(arch, seed) + scale * rng.standard_normal(arch.param_count())


# ---------------------------------------------------------------- jet algebra

@settings(max_examples=100, deadline=None)
@given(finite, finite, finite, finite, finite, finite)
def test_jet2_product_rule(fv, f1, f2, gv, g1, g2):
    f = Jet2(fv, f1, f2)
    g = Jet2(gv, g1, g2)
    p = f * g
    assert p.d1 == pytest.approx(f1 * gv + fv * g1, rel=1e-12, abs=1e-12)
    assert p.d2 == pytest.approx(f2 * gv + 2 * f1 * g1 + fv * g2, rel=1e-12, abs=1e-12)


def test_jet2_lift_constant():
    c = Jet2.lift(np.array(4.0))
    assert c.d1 == 0.0 and c.d2 == 0.0


@settings(max_examples=50, deadline=None)
@given(finite, finite, finite)
def test_jet2_polynomial_exact(a, b, x):
    # f(x) = (a x + b)^2: value, 2a(ax+b), 2a^2, all exact
    j = Jet2(x, 1.0, 0.0)
    lin = Jet2(a * x + b, a, 0.0)
    f = lin * lin
    assert abs(f.value - (a * x + b) ** 2) <= 1e-12 * max(1.0, (a * x + b) ** 2)
    assert abs(f.d1 - 2 * a * (a * x + b)) <= 1e-12 * max(1.0, abs(2 * a * (a * x + b)))
    assert abs(f.d2 - 2 * a * a) <= 1e-12 * max(1.0, 2 * a * a)


def test_crossjet_product_rule():
    f = CrossJet(2.0, 1.0, -1.0, 0.5)
    g = CrossJet(3.0, 0.5, 2.0, -0.25)
    p = f * g
    assert p.dab == pytest.approx(0.5 * 3.0 + 1.0 * 2.0 + (-1.0) * 0.5 + 2.0 * (-0.25))


# ------------------------------------------------------- input derivatives

def test_linear_model_first_derivative():
    arch = MlpArchitecture(2, ())
    theta = np.array([2.0, 3.0, 1.0])  # f = 2 x1 + 3 x2 + 1
    assert input_derivative(theta, arch, [0.3, -0.2], (1,)) == pytest.approx(2.0)
    assert input_derivative(theta, arch, [0.3, -0.2], (2,)) == pytest.approx(3.0)


def test_linear_model_zero_curvature():
    arch = MlpArchitecture(2, ())
    theta = np.array([2.0, 3.0, 1.0])
    assert input_derivative(theta, arch, [0.5, 0.5], (1, 2)) == 0.0
    assert input_derivative(theta, arch, [0.5, 0.5], (1, 1)) == 0.0


def test_order_zero_returns_forward_value():
    arch = MlpArchitecture(2, (4,), "tanh")
    theta = rand_theta(arch, 0)
    x = [0.7, -0.4]
    assert input_derivative(theta, arch, x, ()) == pytest.approx(forward(theta, arch, x))


def test_unsupported_order_raises():
    arch = MlpArchitecture(2, (4,))
    theta = rand_theta(arch, 1)
    with pytest.raises(ValueError):
        input_derivative(theta, arch, [0.0, 0.0], (1, 1, 1))
    with pytest.raises(ValueError):
        input_derivative(theta, arch, [0.0, 0.0], (3,))


def fd_derivative(theta, arch, x, mi, step):
    x = np.asarray(x, dtype=np.float64)

    def f(p):
        return forward(theta, arch, p)

    if len(mi) == 1:
        e = np.zeros_like(x)
        e[mi[0] - 1] = step
        return (f(x + e) - f(x - e)) / (2 * step)
    if mi[0] == mi[1]:
        e = np.zeros_like(x)
        e[mi[0] - 1] = step
        return (f(x + e) - 2 * f(x) + f(x - e)) / step ** 2
    ea = np.zeros_like(x)
    eb = np.zeros_like(x)
    ea[mi[0] - 1] = step
    eb[mi[1] - 1] = step
    return (f(x + ea + eb) - f(x + ea - eb) - f(x - ea + eb) + f(x - ea - eb)) / (4 * step ** 2)


@pytest.mark.parametrize("activation", ["sigmoid", "tanh"])
@pytest.mark.parametrize("mi", [(1,), (2,), (1, 1), (2, 2), (1, 2)])
def test_derivatives_match_finite_differences(activation, mi):
    arch = MlpArchitecture(2, (7, 5), activation)
    rng = np.random.default_rng(hash((activation, mi)) % 2 ** 32)
    for trial in range(20):
        theta = rand_theta(arch, trial)
        x = rng.uniform(0, 2 * np.pi, 2)
        step = 1e-5 if len(mi) == 1 else 1e-3
        want = fd_derivative(theta, arch, x, mi, step)
        got = input_derivative(theta, arch, x, mi)
        assert abs(got - want) <= 1e-4 * max(1.0, abs(want))


def test_jet_value_matches_forward_exactly():
    arch = MlpArchitecture(3, (6, 4), "sigmoid")
    theta = rand_theta(arch, 7)
    x = np.array([0.1, 1.7, -0.6])
    jet = jet_forward(unflatten(theta, arch), x[None, :], (1,), arch.activation)
    assert float(np.asarray(jet.value).reshape(())) == forward(theta, arch, x)


def test_batched_paths_match_simple_path():
    arch = MlpArchitecture(2, (6, 5), "tanh")
    theta = rand_theta(arch, 11)
    layers = unflatten(theta, arch)
    X = np.random.default_rng(8).uniform(0, 2 * np.pi, (9, 2))
    for mis in [[(1,), (2,)], [(1, 1), (2, 2)], [(1, 2), (2, 1)]]:
        _, derivs = mlp_jet_batch(layers, X, mis, arch.activation)
        out, acts, hwts, owt = mlp_forward_parts(layers, X, arch.activation)
        s1s, s2s = act_derivative_factors(acts, arch.activation, len(mis[0]))
        stack = jet_stack_outputs(hwts, owt, s1s, s2s, mis, 2)
        for i, mi in enumerate(mis):
            simple = np.array([input_derivative(theta, arch, X[row], mi)
                               for row in range(X.shape[0])])
            assert np.allclose(derivs[i][:, 0], simple, rtol=1e-10, atol=1e-12)
            assert np.allclose(stack[i, :, 0], simple, rtol=1e-10, atol=1e-12)


def test_constant_stream_is_none_for_linear_second_order():
    arch = MlpArchitecture(2, ())
    layers = unflatten(np.array([1.0, -1.0, 0.0]), arch)
    X = np.zeros((4, 2))
    _, derivs = mlp_jet_batch(layers, X, [(1, 1)], arch.activation)
    assert derivs[0] is None


# --------------------------------------------------------- penalty term grad

def test_hovr_term_constant_network():
    arch = MlpArchitecture(2, (4,))
    theta = init(arch, 0)
    theta[: 4 * 2] = 0.0  # zero first-layer weights: constant in x
    value, grad, kink = hovr_term_grad(theta, arch, [1.0, 2.0], (1,), 2.0)
    assert value == 0.0
    assert np.all(grad == 0.0)
    assert not kink


def test_hovr_term_linear_model_quadratic_in_weight():
    arch = MlpArchitecture(2, ())
    theta = np.array([1.5, -0.5, 2.0])
    value, grad, kink = hovr_term_grad(theta, arch, [0.3, 0.4], (1,), 2.0)
    assert value == pytest.approx(1.5 ** 2)
    assert grad[0] == pytest.approx(2 * 1.5)
    assert grad[1] == 0.0 and grad[2] == 0.0
    assert not kink


def test_hovr_term_kink_flag():
    arch = MlpArchitecture(2, ())
    theta = np.array([0.0, 1.0, 0.0])  # d/dx1 = 0 exactly
    value, grad, kink = hovr_term_grad(theta, arch, [0.3, 0.4], (1,), 0.5)
    assert value == 0.0
    assert np.all(grad == 0.0)
    assert kink


@pytest.mark.parametrize("mi,q", [((1,), 2.0), ((2, 2), 2.0), ((1, 2), 1.5)])
def test_hovr_term_grad_matches_finite_differences(mi, q):
    arch = MlpArchitecture(2, (5, 4), "sigmoid")
    z = np.array([2.0, 4.0])
    for trial in range(10):
        theta = rand_theta(arch, trial + 100)
        _, grad, _ = hovr_term_grad(theta, arch, z, mi, q)
        fd = np.zeros_like(theta)
        for i in range(theta.shape[0]):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += 1e-6
            tm[i] -= 1e-6
            vp = hovr_term_grad(tp, arch, z, mi, q).value
            vm = hovr_term_grad(tm, arch, z, mi, q).value
            fd[i] = (vp - vm) / 2e-6
        err = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1.0)
        assert err <= 1e-4
