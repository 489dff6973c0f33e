import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safeswarm import kernels
from safeswarm.barrier import And, AtomicBarrier, Leaf, Not, Or, eval_exact
from safeswarm.exceptions import ConfigurationError
from safeswarm.smoothing import (Scheme, SmoothBarrier, SmoothingConfig, TransitionPolynomial,
                                 phi_smooth, phi_smooth_derivatives, smooth_eval, smooth_grad,
                                 smooth_hessian, smooth_min_pair, transition_band_error,
                                 transition_coefficients)
from safeswarm.verify import brute_min_oracle, fd_gradient_oracle, fd_hessian_oracle

POLY = SmoothingConfig(Scheme.POLYNOMIAL, beta=1.0, k=2)
finite = st.floats(-50, 50, allow_nan=False)


def test_quintic_coefficients():
    assert np.allclose(transition_coefficients(2), [0, 15 / 8, 0, -5 / 4, 0, 3 / 8], atol=1e-12)
    beta = 0.5
    a = TransitionPolynomial(beta, 2).coefficients
    assert a[1] == pytest.approx(15 / (8 * beta))
    assert a[3] == pytest.approx(-5 / (4 * beta ** 3))
    assert a[5] == pytest.approx(3 / (8 * beta ** 5))


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_transition_meets_sign_with_k_flat_derivatives(k):
    p = TransitionPolynomial(0.7, k)
    for r in range(k + 1):
        assert p.derivative(0.7, r) == pytest.approx(1.0 if r == 0 else 0.0, abs=1e-9)
        assert p.derivative(-0.7, r) == pytest.approx(-1.0 if r == 0 else 0.0, abs=1e-9)
    assert p.degree == 2 * k + 1


def test_reference_values():
    assert phi_smooth(0.5, POLY) == pytest.approx(0.79296875, abs=1e-12)
    assert phi_smooth(2.0, POLY) == 1.0
    assert phi_smooth(-2.0, POLY) == -1.0
    assert smooth_min_pair(1.0, 1.2, POLY) == pytest.approx(1.063488, abs=1e-9)
    assert smooth_min_pair(3.0, 1.0, POLY) == 1.0


@given(finite, finite)
def test_smooth_min_is_symmetric_and_above_min(a, b):
    v = smooth_min_pair(a, b, POLY)
    assert v == pytest.approx(smooth_min_pair(b, a, POLY), abs=1e-9)
    assert v >= min(a, b) - 1e-12
    assert v - min(a, b) <= transition_band_error(POLY) + 1e-9


@given(finite, finite)
def test_lse_below_min(a, b):
    cfg = SmoothingConfig(Scheme.LOGSUMEXP, beta=0.5)
    v = smooth_min_pair(a, b, cfg)
    assert v <= min(a, b) + 1e-12
    assert v >= min(a, b) - np.log(2) / cfg.sharpness - 1e-12


def test_phi_derivatives_match_finite_differences():
    ell = np.linspace(-0.95, 0.95, 41)
    cfg = SmoothingConfig(beta=1.0)
    phi, d1, d2 = phi_smooth_derivatives(ell, cfg)
    e = 1e-6
    assert np.allclose(d1, (phi_smooth(ell + e, cfg) - phi_smooth(ell - e, cfg)) / (2 * e), atol=1e-6)
    dd = phi_smooth_derivatives(ell + e, cfg)[1] - phi_smooth_derivatives(ell - e, cfg)[1]
    assert np.allclose(d2, dd / (2 * e), atol=1e-5)


def _random_tree(rng, n_agents=3):
    pairs = [Leaf(AtomicBarrier.pair(i, j, 0.3)) for i in range(n_agents)
             for j in range(i + 1, n_agents)]
    obs = [Leaf(AtomicBarrier.obstacle(i, rng.normal(size=2), 0.4, 0)) for i in range(n_agents)]
    sq = Leaf(AtomicBarrier.custom(lambda x: 4.0 - x @ x, lambda x: -2 * x,
                                   lambda x: -2 * np.eye(x.size)))
    return And((And(tuple(pairs)), Or((And(tuple(obs)), Not(pairs[0]))), sq))


@pytest.mark.parametrize("scheme", ["poly", "lse"])
def test_backends_agree(scheme, rng):
    if kernels.compiled is None:
        pytest.skip("compiled kernel not built")
    tree = _random_tree(rng)
    cfg = SmoothingConfig(scheme, beta=0.4)
    a = SmoothBarrier(tree, cfg, 6, backend="compiled")
    b = SmoothBarrier(tree, cfg, 6, backend="python")
    X = rng.normal(scale=1.5, size=(200, 6))
    Va, Ga, Ha = a.evaluate_batch(X)
    Vb, Gb, Hb = b.evaluate_batch(X)
    assert np.allclose(Va, Vb, atol=1e-12, rtol=0)
    assert np.allclose(Ga, Gb, atol=1e-11, rtol=0)
    assert np.allclose(Ha, Hb, atol=1e-10, rtol=0)


@pytest.mark.parametrize("scheme", ["poly", "lse"])
def test_derivatives_match_finite_differences(scheme, rng):
    tree = _random_tree(rng)
    sb = SmoothBarrier(tree, SmoothingConfig(scheme, beta=0.5), 6)
    for x in rng.normal(size=(25, 6)):
        _, g, H = sb.evaluate(x)
        assert np.allclose(g, fd_gradient_oracle(sb.value, x), atol=2e-6)
        assert np.allclose(H, fd_hessian_oracle(sb.gradient, x), atol=2e-4)


def test_small_beta_recovers_exact_composition(rng):
    tree = _random_tree(rng)
    cfg = SmoothingConfig(beta=1e-6)
    for x in rng.normal(size=(50, 6)):
        assert smooth_eval(tree, x, cfg) == pytest.approx(brute_min_oracle(tree, x), abs=1e-5)
        assert brute_min_oracle(tree, x) == eval_exact(tree, x)


def test_functional_api_consistent(rng):
    tree = _random_tree(rng)
    cfg = SmoothingConfig(beta=0.3)
    x = rng.normal(size=6)
    sb = SmoothBarrier(tree, cfg, 6)
    v, g, H = sb.evaluate(x)
    assert smooth_eval(tree, x, cfg) == v
    assert np.array_equal(smooth_grad(tree, x, cfg), g)
    assert np.array_equal(smooth_hessian(tree, x, cfg), H)


def test_hessian_requires_c2():
    tree = And((Leaf(AtomicBarrier.pair(0, 1, 0.1)), Leaf(AtomicBarrier.obstacle(0, (0, 0), 0.1))))
    sb = SmoothBarrier(tree, SmoothingConfig(k=1), 4)
    sb.gradient(np.ones(4))
    with pytest.raises(ConfigurationError, match="C\\^2"):
        sb.hessian(np.ones(4))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SmoothingConfig(beta=0.0)
    with pytest.raises(ConfigurationError):
        SmoothingConfig(k=0)
    with pytest.raises(ValueError):
        SmoothingConfig(scheme="cubic")
    assert SmoothingConfig(beta=0.5).sharpness == pytest.approx(20.0)


def test_state_shape_checked():
    sb = SmoothBarrier(Leaf(AtomicBarrier.pair(0, 1, 0.1)), SmoothingConfig(), 4)
    with pytest.raises(ConfigurationError):
        sb.value(np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_single_leaf_is_untouched(xs):
    leaf = Leaf(AtomicBarrier.pair(0, 1, 0.2))
    x = np.array(xs)
    v, g, H = SmoothBarrier(leaf, SmoothingConfig(), 4).evaluate(x)
    assert v == pytest.approx(leaf.barrier.value(x), abs=1e-12)
    assert np.allclose(g, leaf.barrier.gradient(x))
    assert np.allclose(H, leaf.barrier.hessian(x))
