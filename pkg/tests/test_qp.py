import numpy as np
import pytest

from safeswarm.exceptions import ConfigurationError
from safeswarm.qp import QPProblem, QPStatus, project_halfspace, solve_qp
from safeswarm.verify import kkt_enumeration_oracle


def random_qp(rng, n, m, box=None):
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(-0.5, 0.5, size=n)
    b = A @ x0 - rng.exponential(size=m) * (rng.random(m) < 0.7)
    lb, ub = (None, None) if box is None else (-box, box)
    return QPProblem(H, 3 * rng.normal(size=n), A, b, lb, ub)


def test_unconstrained_minimizer():
    ud = np.array([1.0, -2.0, 0.5])
    sol = solve_qp(QPProblem(np.eye(3), -ud))
    assert sol.status is QPStatus.OPTIMAL
    assert np.allclose(sol.x, ud)
    assert sol.active == []


def test_single_row_is_halfspace_projection(rng):
    for _ in range(50):
        ud = rng.normal(size=4)
        row = rng.normal(size=4)
        rhs = rng.normal()
        sol = solve_qp(QPProblem(np.eye(4), -ud, row[None], [rhs]))
        assert np.allclose(sol.x, project_halfspace(ud, row, rhs), atol=1e-10)


def test_contradictory_rows_infeasible():
    row = np.array([1.0, 0.0])
    sol = solve_qp(QPProblem(np.eye(2), np.zeros(2), np.vstack([row, -row]), [1.0, 1.0], -100, 100))
    assert sol.status is QPStatus.INFEASIBLE
    assert sol.blocking == 1


def test_row_outside_box_infeasible():
    sol = solve_qp(QPProblem(np.eye(2), np.zeros(2), [[1.0, 1.0]], [5.0], -2, 2))
    assert sol.status is QPStatus.INFEASIBLE


def test_iteration_cap():
    rng = np.random.default_rng(0)
    p = random_qp(rng, 10, 8, box=0.2)
    assert solve_qp(p, max_iter=1).status is QPStatus.MAX_ITER


@pytest.mark.parametrize("box", [None, 0.7])
def test_matches_enumeration_oracle(rng, box):
    for _ in range(150):
        n = int(rng.integers(1, 7 if box else 10))
        m = int(rng.integers(0, 5 if box else 8))
        p = random_qp(rng, n, m, box)
        sol = solve_qp(p)
        ref = kkt_enumeration_oracle(p)
        assert sol.status is QPStatus.OPTIMAL
        assert sol.kkt_residual <= 1e-8
        assert np.allclose(sol.x, ref, atol=1e-7)


def test_hint_does_not_change_solution(rng):
    for _ in range(30):
        p = random_qp(rng, 8, 6, box=0.5)
        a = solve_qp(p)
        b = solve_qp(p, active_hint=list(reversed(range(p.m + 2 * p.n))))
        assert np.allclose(a.x, b.x, atol=1e-9)


def test_requires_positive_definite_hessian():
    with pytest.raises(ConfigurationError):
        solve_qp(QPProblem(np.diag([1.0, 0.0]), np.zeros(2)))
    with pytest.raises(ConfigurationError):
        QPProblem(np.eye(2), np.zeros(2), lb=[1, 1], ub=[0, 0])
