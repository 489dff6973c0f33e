import numpy as np
import pytest

from safeswarm.barrier import (And, AtomicBarrier, BarrierKind, KappaFunction, Leaf, Not, Or,
                               depth, eval_exact, in_safe_set, iter_leaves)
from safeswarm.exceptions import ConfigurationError
from safeswarm.verify import fd_gradient_oracle, fd_hessian_oracle


def test_pair_value_gradient_hessian():
    b = AtomicBarrier.pair(0, 1, 0.5)
    x = np.array([1.0, 2.0, 4.0, 6.0])
    assert b.value(x) == pytest.approx(25.0 - 0.25)
    assert np.allclose(b.gradient(x), [-6, -8, 6, 8])
    H = b.hessian(x)
    assert np.allclose(H, H.T)
    assert np.allclose(H[:2, 2:], -2 * np.eye(2))


def test_obstacle_matches_finite_differences(rng):
    b = AtomicBarrier.obstacle(1, (0.5, -1.0), 0.3)
    x = rng.normal(size=6)
    assert np.allclose(b.gradient(x), fd_gradient_oracle(b.value, x), atol=1e-7)
    assert np.allclose(b.hessian(x), fd_hessian_oracle(b.gradient, x), atol=1e-6)


def test_custom_leaf_shape_checked():
    b = AtomicBarrier.custom(lambda x: 1.0, lambda x: np.zeros(3), lambda x: np.zeros((3, 3)))
    with pytest.raises(ConfigurationError):
        b.gradient(np.zeros(2))
    with pytest.raises(ConfigurationError):
        b.hessian(np.zeros(2))


@pytest.mark.parametrize("kwargs", [
    dict(kind=BarrierKind.PAIR_DISTANCE, agents=(1, 1)),
    dict(kind=BarrierKind.PAIR_DISTANCE, agents=(0,)),
    dict(kind=BarrierKind.OBSTACLE_DISTANCE, agents=(0,), center=(1.0,)),
    dict(kind=BarrierKind.CUSTOM),
])
def test_invalid_atomic_barriers(kwargs):
    with pytest.raises(ConfigurationError):
        AtomicBarrier(**kwargs)


def test_agent_index_out_of_range():
    with pytest.raises(ConfigurationError):
        AtomicBarrier.pair(0, 3, 0.1).value(np.zeros(4))


def test_composition_semantics():
    a = Leaf(AtomicBarrier.custom(lambda x: x[0], lambda x: np.eye(2)[0], lambda x: np.zeros((2, 2))))
    b = Leaf(AtomicBarrier.custom(lambda x: x[1], lambda x: np.eye(2)[1], lambda x: np.zeros((2, 2))))
    x = np.array([2.0, -3.0])
    assert eval_exact(And((a, b)), x) == -3.0
    assert eval_exact(Or((a, b)), x) == 2.0
    assert eval_exact(Not(a), x) == -2.0
    assert eval_exact(Or((Not(a), And((a, b)))), x) == -2.0
    assert not in_safe_set(And((a, b)), x)
    assert depth(Or((Not(a), And((a, b))))) == 2
    assert len(list(iter_leaves(Or((Not(a), And((a, b))))))) == 3


def test_nodes_need_two_children():
    leaf = Leaf(AtomicBarrier.pair(0, 1, 0.1))
    with pytest.raises(ConfigurationError):
        And((leaf,))
    with pytest.raises(ConfigurationError):
        Or(())


def test_kappa_function():
    k = KappaFunction(2.0, 3)
    assert k.slope == 8.0
    assert k(0.5) == 4.0
    assert KappaFunction(1.0, 1)(3.0) == 3.0
    with pytest.raises(ConfigurationError):
        KappaFunction(0.0)
