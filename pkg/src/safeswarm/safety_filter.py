"""Chance-constrained CBF quadratic program over a receding horizon.

For each predicted state along the nominal rollout the smoothed barrier
``h`` contributes one linear row on that step's control block:

    grad(h)' G u >= -(grad(h)' F + 1/2 tr(D hess(h)) + alpha(h)) + kappa ||Sigma^1/2 K' grad(h)||

where ``kappa`` is the standard-normal quantile of ``1 - delta_h`` and
``D = dt K Sigma K'`` is the per-step covariance of the state increment
caused by the disturbance. The cost is the squared deviation from the
nominal sequence, switched off at predicted steps already inside the goal
ball.
"""

from __future__ import annotations

import enum
import time
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .barrier import KappaFunction
from .dynamics import EnsembleModel
from .exceptions import ConfigurationError, NumericalError
from .qp import QPProblem, QPStatus, solve_qp
from .smoothing import SmoothBarrier

# Weight given to cost blocks whose indicator is zero, keeping H positive definite.
ZERO_WEIGHT_REGULARIZATION = 1e-6


class ItoScaling(str, enum.Enum):
    """How the second-order noise term is scaled.

    ``DT_COVARIANCE`` uses ``D = dt K Sigma K'`` (the covariance of one step's
    state increment per unit time). ``LITERAL`` uses ``D = K K'`` as the
    continuous-time unit-diffusion form.
    """

    DT_COVARIANCE = "dt_cov"
    LITERAL = "literal"


@dataclass(frozen=True)
class NominalController:
    """Proportional goal-seeking law with disturbance feedthrough.

    ``u_d = -k_p (x - x_g) + K w``; with ``paper_literal_sign`` the
    proportional term is ``+k_p (x - x_g)`` (goal-repelling, kept only for
    comparison). When ``u_max`` is given each agent's block is scaled down
    until its largest component is ``u_max``, which keeps the block's
    direction (componentwise clipping would bend it).
    """

    k_p: float
    goal: np.ndarray
    noise_feedthrough: bool = True
    paper_literal_sign: bool = False
    u_max: float | None = None

    def __post_init__(self):
        if not self.k_p > 0:
            raise ConfigurationError(f"k_p must be positive, got {self.k_p}")
        goal = np.array(self.goal, dtype=float).ravel()
        goal.setflags(write=False)
        object.__setattr__(self, "goal", goal)


def nominal_control(ctrl: NominalController, x, w, model: EnsembleModel) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != ctrl.goal.shape:
        raise ConfigurationError(f"state has shape {x.shape}, goal has {ctrl.goal.shape}")
    sign = 1.0 if ctrl.paper_literal_sign else -1.0
    u = sign * ctrl.k_p * (x - ctrl.goal)
    if ctrl.noise_feedthrough:
        u = u + model.K_ens @ np.asarray(w, dtype=float)
    if ctrl.u_max is not None:
        blocks = u.reshape(model.N, model.agent.m)
        peak = np.max(np.abs(blocks), axis=1, keepdims=True)
        u = (blocks * np.minimum(1.0, ctrl.u_max / np.maximum(peak, 1e-300))).ravel()
    return u


@dataclass(frozen=True)
class ChanceSpec:
    delta_h: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.delta_h < 1.0:
            raise ConfigurationError(f"delta_h must lie in (0, 1), got {self.delta_h}")

    @property
    def kappa(self) -> float:
        return NormalDist().inv_cdf(1.0 - self.delta_h)


@dataclass(frozen=True)
class NoiseGeometry:
    """Ensemble noise matrices used by the constraint rows and the safety monitor."""

    K: np.ndarray        # K_ens
    Sigma: np.ndarray    # stacked disturbance covariance
    D: np.ndarray        # matrix in the second-order (trace) term

    @classmethod
    def build(cls, model: EnsembleModel, sigma_w, dt: float,
              ito: ItoScaling | str = ItoScaling.DT_COVARIANCE) -> "NoiseGeometry":
        ito = ItoScaling(ito)
        Sw = np.atleast_2d(np.asarray(sigma_w, dtype=float))
        Sigma = np.kron(np.eye(model.N), Sw)
        K = model.K_ens
        if Sigma.shape != K.shape:
            raise ConfigurationError(f"covariance shape {Sigma.shape} does not match K {K.shape}")
        D = dt * K @ Sigma @ K.T if ito is ItoScaling.DT_COVARIANCE else K @ K.T
        return cls(K, Sigma, D)

    def diffusion_std(self, grad: np.ndarray) -> np.ndarray:
        """``||Sigma^1/2 K' grad||`` for one gradient or a stack of them."""
        v = grad @ self.K
        return np.sqrt(np.einsum("...i,ij,...j->...", v, self.Sigma, v))


def build_cbf_rows(X, barrier: SmoothBarrier, model: EnsembleModel, alpha: KappaFunction,
                   chance: ChanceSpec, noise: NoiseGeometry):
    """Constraint rows at a batch of predicted states.

    Returns ``(rows (T, Nm), rhs (T,), h (T,), grad (T, n))`` with each
    constraint posed as ``rows[t] . u_t >= rhs[t]``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if barrier.cfg.scheme.value == "poly" and barrier.cfg.k < 2:
        raise ConfigurationError("CBF rows need the barrier Hessian, set k >= 2")
    h, g, Hs = barrier.evaluate_batch(X, order=2)
    if not np.all(np.isfinite(Hs)):
        raise NumericalError("non-finite barrier Hessian")
    rows = np.empty((X.shape[0], model.nu))
    lf = np.empty(X.shape[0])
    for t, x in enumerate(X):
        rows[t] = g[t] @ model.G(x)
        lf[t] = g[t] @ model.F(x)
    trace = 0.5 * np.einsum("ij,tij->t", noise.D, Hs)
    rhs = -(lf + trace + alpha(h)) + chance.kappa * noise.diffusion_std(g)
    return rows, rhs, h, g


def build_cbf_row(x_pred, barrier: SmoothBarrier, model: EnsembleModel, alpha: KappaFunction,
                  chance: ChanceSpec, noise: NoiseGeometry):
    """Single-state version of :func:`build_cbf_rows`; returns ``(row, rhs)``."""
    rows, rhs, _, _ = build_cbf_rows(np.asarray(x_pred, dtype=float)[None], barrier, model,
                                     alpha, chance, noise)
    return rows[0], float(rhs[0])


@dataclass
class SafeControlResult:
    u_seq: np.ndarray
    status: QPStatus
    margins: np.ndarray
    objective: float
    solve_time: float
    u_nominal: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    x_pred: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    h_pred: np.ndarray = field(default_factory=lambda: np.zeros(0))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    active: list[int] = field(default_factory=list)
    infeasible_step: int | None = None
    kkt_residual: float = float("inf")


def rollout_nominal(x0, ctrl: NominalController, model: EnsembleModel, w, T_u: int, dt: float):
    """Nominal controls and predicted states under mean dynamics (no disturbance in the state)."""
    X = np.empty((T_u, model.n))
    U = np.empty((T_u, model.nu))
    x = np.asarray(x0, dtype=float)
    for t in range(T_u):
        X[t] = x
        U[t] = nominal_control(ctrl, x, w, model)
        x = x + dt * (model.F(x) + model.G(x) @ U[t])
    return X, U


def filter_controls(x0, barrier: SmoothBarrier, model: EnsembleModel, ctrl: NominalController,
                    chance: ChanceSpec, noise: NoiseGeometry, T_u: int, u_max: float, w,
                    alpha: KappaFunction, dt: float, eps_g: float, active_hint=None,
                    max_iter: int = 200) -> SafeControlResult:
    """Solve the horizon QP and return the filtered control sequence."""
    if T_u < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {T_u}")
    x0 = np.asarray(x0, dtype=float)
    X, Ud = rollout_nominal(x0, ctrl, model, w, T_u, dt)
    rows, rhs, h, _ = build_cbf_rows(X, barrier, model, alpha, chance, noise)
    if h[0] < 0:
        warnings.warn(f"filter called outside the smoothed safe set (h = {h[0]:.3g})",
                      RuntimeWarning, stacklevel=2)
    m = model.nu
    nvar = T_u * m
    indicator = (np.linalg.norm(X - ctrl.goal, axis=1) > eps_g).astype(float)
    wts = np.where(indicator > 0, 1.0, ZERO_WEIGHT_REGULARIZATION)
    diag = np.repeat(wts, m)
    A = np.zeros((T_u, nvar))
    for t in range(T_u):
        A[t, t * m:(t + 1) * m] = rows[t]
    prob = QPProblem(np.diag(diag), -diag * Ud.ravel(), A, rhs, -u_max, u_max)
    t0 = time.perf_counter()
    sol = solve_qp(prob, max_iter=max_iter, active_hint=active_hint)
    elapsed = time.perf_counter() - t0
    U = sol.x.reshape(T_u, m)
    margins = np.einsum("ti,ti->t", rows, U) - rhs
    objective = float(np.sum(indicator * np.sum((U - Ud) ** 2, axis=1)))
    step = None
    if sol.status is QPStatus.INFEASIBLE and sol.blocking is not None:
        b = sol.blocking
        step = b if b < T_u else ((b - T_u) % nvar) // m
    return SafeControlResult(U, sol.status, margins, objective, elapsed, Ud, X, h, indicator,
                             sol.active, step, sol.kkt_residual)
