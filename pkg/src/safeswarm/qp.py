"""Dense dual active-set solver for small strictly convex QPs.

Solves ``min 1/2 x'Hx + c'x  s.t.  A x >= b,  lb <= x <= ub`` with the
Goldfarb-Idnani method. The method starts at the unconstrained minimizer and
adds violated constraints one at a time while keeping dual feasibility, so
it either terminates at the optimum or proves infeasibility. The factor
``J`` with ``J' N = [R; 0]`` (``N`` the active normals) is updated with a
Householder reflection when a constraint enters and Givens rotations when
one leaves.

Constraint indices run over the general rows first, then the lower bounds,
then the upper bounds. Among violated constraints the lowest index enters.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import ConfigurationError


class QPStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass
class QPProblem:
    H: np.ndarray
    c: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = self.H.shape[0]
        if self.H.shape != (n, n):
            raise ConfigurationError(f"H must be square, got {self.H.shape}")
        self.c = np.asarray(self.c, dtype=float).reshape(n)
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(self.A.shape[0])
        self.lb = np.full(n, -np.inf) if self.lb is None else np.broadcast_to(
            np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(
            np.asarray(self.ub, dtype=float), (n,)).copy()
        if np.any(self.lb > self.ub):
            raise ConfigurationError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def constraint_matrix(self):
        """All constraints as ``C x >= d`` (infinite bounds dropped), with their global indices."""
        n = self.n
        eye = np.eye(n)
        lo = np.flatnonzero(np.isfinite(self.lb))
        hi = np.flatnonzero(np.isfinite(self.ub))
        C = np.vstack([self.A, eye[lo], -eye[hi]])
        d = np.concatenate([self.b, self.lb[lo], -self.ub[hi]])
        index = np.concatenate([np.arange(self.m), self.m + lo, self.m + n + hi])
        return C, d, index

    def objective(self, x) -> float:
        return float(0.5 * x @ self.H @ x + self.c @ x)


@dataclass
class QPSolution:
    x: np.ndarray
    status: QPStatus
    objective: float
    active: list[int] = field(default_factory=list)
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    kkt_residual: float = math.inf
    blocking: int | None = None


def kkt_residual(p: QPProblem, x: np.ndarray, active: list[int], lam: np.ndarray) -> float:
    """Worst violation of stationarity, primal/dual feasibility and complementarity."""
    C, d, index = p.constraint_matrix()
    pos = {g: k for k, g in enumerate(index)}
    full = np.zeros(C.shape[0])
    for g, val in zip(active, lam):
        full[pos[g]] = val
    slack = C @ x - d
    stat = p.H @ x + p.c - C.T @ full
    scale = 1.0 + np.max(np.abs(p.c), initial=0.0)
    return float(max(
        np.max(np.abs(stat), initial=0.0) / scale,
        np.max(-slack, initial=0.0),
        np.max(-full, initial=0.0),
        np.max(np.abs(full * slack), initial=0.0),
    ))


def _givens(a: float, b: float):
    r = math.hypot(a, b)
    if r == 0.0:
        return 1.0, 0.0, 0.0
    return a / r, b / r, r


def solve_qp(p: QPProblem, max_iter: int = 200, tol: float = 1e-10,
             active_hint=None) -> QPSolution:
    """Goldfarb-Idnani dual active-set solve.

    ``active_hint`` is an optional sequence of global constraint indices that
    are tried first when several constraints are violated (warm start); it
    never changes the optimum, only the order in which it is reached.
    """
    H = 0.5 * (p.H + p.H.T)
    n = p.n
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise ConfigurationError("QP Hessian must be positive definite") from None
    C, d, index = p.constraint_matrix()
    norms = np.maximum(np.linalg.norm(C, axis=1), 1e-300)
    J = solve_triangular(L, np.eye(n), lower=True, trans="T")
    x = -(J @ (J.T @ p.c))
    R = np.zeros((n, n))
    act: list[int] = []
    u = np.zeros(0)
    hint = [int(np.flatnonzero(index == h)[0]) for h in (active_hint or ())
            if np.any(index == h)]
    iters = 0
    status = QPStatus.OPTIMAL
    blocking = None

    while True:
        slack = C @ x - d
        viol = np.flatnonzero(slack < -tol * (1.0 + np.abs(d)))
        viol = viol[~np.isin(viol, act)]
        if viol.size == 0:
            break
        vset = set(viol.tolist())
        pick = next((h for h in hint if h in vset), int(viol[0]))
        np_ = C[pick]
        uplus = np.append(u, 0.0)
        while True:
            iters += 1
            if iters > max_iter:
                status = QPStatus.MAX_ITER
                break
            q = len(act)
            dvec = J.T @ np_
            z = J[:, q:] @ dvec[q:]
            r = solve_triangular(R[:q, :q], dvec[:q]) if q else np.zeros(0)
            t1, drop = math.inf, -1
            with np.errstate(over="ignore"):
                # tiny positive r[j] overflows to inf, which just means "no bound"
                for j in range(q):
                    if r[j] > 0.0:
                        ratio = uplus[j] / r[j]
                        if ratio < t1:
                            t1, drop = ratio, j
            zn = float(z @ np_)
            if np.linalg.norm(z) <= 1e-12 * norms[pick] or zn <= 1e-14 * norms[pick] ** 2:
                t2 = math.inf
            else:
                t2 = -float(np_ @ x - d[pick]) / zn
            t = min(t1, t2)
            if math.isinf(t):
                status = QPStatus.INFEASIBLE
                blocking = int(index[pick])
                break
            if math.isinf(t2):
                uplus[:q] -= t * r
                uplus[q] += t
                J, R = _drop(J, R, q, drop)
                act.pop(drop)
                uplus = np.delete(uplus, drop)
                continue
            x = x + t * z
            uplus[:q] -= t * r
            uplus[q] += t
            if t == t2:
                J, R = _add(J, R, q, dvec)
                act.append(pick)
                u = uplus
                break
            J, R = _drop(J, R, q, drop)
            act.pop(drop)
            uplus = np.delete(uplus, drop)
        if status is not QPStatus.OPTIMAL:
            break

    g_active = [int(index[k]) for k in act]
    lam = np.asarray(u[:len(act)], dtype=float) if status is QPStatus.OPTIMAL else np.zeros(len(act))
    res = kkt_residual(p, x, g_active, lam) if status is QPStatus.OPTIMAL else math.inf
    if status is QPStatus.OPTIMAL and res > 1e-9:
        x, lam, res = _polish(p, C, d, act, x, lam, res, index)
    return QPSolution(x=x, status=status, objective=p.objective(x), active=g_active,
                      multipliers=lam, iterations=iters, kkt_residual=res, blocking=blocking)


def _add(J, R, q, dvec):
    # A Householder reflection on columns q.. of J zeroes dvec[q+1:].
    J = J.copy()
    tail = dvec[q:].copy()
    alpha = -math.copysign(np.linalg.norm(tail), tail[0]) if tail[0] != 0 else -np.linalg.norm(tail)
    v = tail
    v[0] -= alpha
    vv = float(v @ v)
    if vv > 0.0:
        J[:, q:] -= np.outer(J[:, q:] @ v, (2.0 / vv) * v)
    R = R.copy()
    R[:q, q] = dvec[:q]
    R[q, q] = alpha
    return J, R


def _drop(J, R, q, l):
    R = np.delete(R, l, axis=1)
    R = np.hstack([R, np.zeros((R.shape[0], 1))])
    J = J.copy()
    for k in range(l, q - 1):
        c, s, rho = _givens(R[k, k], R[k + 1, k])
        if s == 0.0:
            continue
        rk, rk1 = R[k, k:q - 1].copy(), R[k + 1, k:q - 1].copy()
        R[k, k:q - 1] = c * rk + s * rk1
        R[k + 1, k:q - 1] = -s * rk + c * rk1
        R[k + 1, k] = 0.0
        a, b = J[:, k].copy(), J[:, k + 1].copy()
        J[:, k] = c * a + s * b
        J[:, k + 1] = -s * a + c * b
    R[q - 1, :] = 0.0
    return J, R


def _polish(p, C, d, act, x, lam, res, index):
    # One exact equality-constrained solve on the final active set.
    N = C[act].T
    q = N.shape[1]
    K = np.block([[p.H, -N], [N.T, np.zeros((q, q))]])
    rhs = np.concatenate([-p.c, d[act]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return x, lam, res
    xs, ls = sol[:p.n], sol[p.n:]
    g_active = [int(index[k]) for k in act]
    r2 = kkt_residual(p, xs, g_active, ls)
    if r2 < res:
        return xs, ls, r2
    return x, lam, res


def project_halfspace(u_d, row, rhs):
    """Closed-form minimizer of ``||u - u_d||^2`` subject to ``row . u >= rhs``."""
    u_d = np.asarray(u_d, dtype=float)
    row = np.asarray(row, dtype=float)
    lam = max(0.0, (rhs - row @ u_d) / (row @ row))
    return u_d + lam * row
