"""Smooth approximations of Boolean-composed barriers.

The two-argument minimum is written as ``min(h1, h2) = -(l*phi(l) - l')/2``
with ``l = h2 - h1``, ``l' = h1 + h2`` and ``phi`` the sign function.
Replacing ``phi`` on ``[-beta, beta]`` by an odd polynomial of degree
``2k + 1`` that meets +-1 with ``k`` vanishing derivatives gives a ``C^k``
smooth minimum that is exact outside the band. AND over more than two
children is a left fold of this pairwise form; OR and NOT go through
negation. The log-sum-exp soft-min is provided as the alternative scheme.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .barrier import And, AtomicBarrier, BarrierExpr, BarrierKind, Leaf, Not, Or, iter_leaves
from .exceptions import ConfigurationError, NumericalError


class Scheme(str, enum.Enum):
    POLYNOMIAL = "poly"
    LOGSUMEXP = "lse"


@dataclass(frozen=True)
class SmoothingConfig:
    """Smoothing scheme and its parameters.

    ``beta`` is the half-width of the polynomial transition band (in units of
    the barrier values). ``lse_sharpness`` defaults to ``10 / beta`` so both
    schemes are driven by the same parameter.
    """

    scheme: Scheme = Scheme.POLYNOMIAL
    beta: float = 0.1
    k: int = 2
    lse_sharpness: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigurationError(f"smoothness order k must be a positive integer, got {self.k}")
        if self.lse_sharpness is not None and not self.lse_sharpness > 0:
            raise ConfigurationError(f"lse_sharpness must be positive, got {self.lse_sharpness}")

    @property
    def degree(self) -> int:
        return 2 * self.k + 1

    @property
    def sharpness(self) -> float:
        return self.lse_sharpness if self.lse_sharpness is not None else 10.0 / self.beta


@functools.lru_cache(maxsize=None)
def _normalized_coefficients(k: int) -> tuple[float, ...]:
    # Unknowns c_0..c_p of M(t) on t in [-1, 1]; rows impose M(+-1) = +-1 and
    # M^(r)(+-1) = 0 for r = 1..k.
    p = 2 * k + 1
    rows, rhs = [], []
    for s in (1.0, -1.0):
        for r in range(k + 1):
            row = np.zeros(p + 1)
            for j in range(r, p + 1):
                row[j] = math.perm(j, r) * s ** (j - r)
            rows.append(row)
            rhs.append(s if r == 0 else 0.0)
    c = np.linalg.solve(np.array(rows), np.array(rhs))
    even = c[0::2]
    if np.max(np.abs(even)) > 1e-9:
        raise NumericalError(f"transition polynomial for k={k} is not odd: {c}")
    c[0::2] = 0.0
    return tuple(float(v) for v in c)


def transition_coefficients(k: int) -> np.ndarray:
    """Coefficients of the transition polynomial in the normalized variable ``l/beta``."""
    return np.array(_normalized_coefficients(int(k)))


class TransitionPolynomial:
    """The polynomial ``M_k(l, beta) = sum_j a_j(beta) l**j`` used inside the band."""

    def __init__(self, beta: float, k: int = 2):
        if not beta > 0:
            raise ConfigurationError(f"beta must be positive, got {beta}")
        self.beta = float(beta)
        self.k = int(k)
        self._c = transition_coefficients(self.k)

    @property
    def degree(self) -> int:
        return 2 * self.k + 1

    @property
    def coefficients(self) -> np.ndarray:
        """``a_0 .. a_p`` in the unnormalized variable."""
        return self._c / self.beta ** np.arange(self._c.size)

    def __call__(self, ell):
        return self.derivative(ell, 0)

    def derivative(self, ell, order: int = 1):
        poly = np.polynomial.Polynomial(self.coefficients)
        return poly.deriv(order)(np.asarray(ell, dtype=float)) if order else poly(
            np.asarray(ell, dtype=float))


def phi_exact(ell):
    """Sign function with ``phi(0) = 1``."""
    out = np.where(np.asarray(ell) >= 0, 1.0, -1.0)
    return float(out) if out.ndim == 0 else out


def phi_smooth_derivatives(ell, cfg: SmoothingConfig):
    """``(phi_hat, dphi_hat/dl, d2phi_hat/dl2)`` for the polynomial scheme."""
    ell = np.asarray(ell, dtype=float)
    beta = cfg.beta
    c = transition_coefficients(cfg.k)
    t = np.clip(ell / beta, -1.0, 1.0)
    poly = np.polynomial.Polynomial(c)
    inside = np.abs(ell) <= beta
    phi = np.where(inside, poly(t), np.sign(ell))
    dphi = np.where(inside, poly.deriv(1)(t) / beta, 0.0)
    d2phi = np.where(inside, poly.deriv(2)(t) / beta**2, 0.0)
    return phi, dphi, d2phi


def phi_smooth(ell, cfg: SmoothingConfig):
    """Smoothed sign: +1 above ``beta``, -1 below ``-beta``, ``M_k`` in between."""
    if cfg.scheme is not Scheme.POLYNOMIAL:
        raise ConfigurationError("phi_smooth is defined for the polynomial scheme only")
    phi = phi_smooth_derivatives(ell, cfg)[0]
    return float(phi) if phi.ndim == 0 else phi


def smooth_min_pair(h1, h2, cfg: SmoothingConfig):
    """Smooth minimum of two values (array-broadcasting)."""
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    if cfg.scheme is Scheme.LOGSUMEXP:
        s = cfg.sharpness
        lo = np.minimum(h1, h2)
        out = lo - np.log(np.exp(-s * (h1 - lo)) + np.exp(-s * (h2 - lo))) / s
    else:
        ell = h2 - h1
        phi = phi_smooth_derivatives(ell, cfg)[0]
        blended = -0.5 * (ell * phi - (h1 + h2))
        out = np.where(np.abs(ell) > cfg.beta, np.minimum(h1, h2), blended)
    return float(out) if out.ndim == 0 else out


def transition_band_error(cfg: SmoothingConfig) -> float:
    """Largest pointwise gap ``smooth_min_pair - min`` for the polynomial scheme."""
    ell = np.linspace(0.0, cfg.beta, 4001)
    phi = phi_smooth_derivatives(ell, cfg)[0]
    return float(np.max(0.5 * ell * (1.0 - phi)))


def _emit(expr: BarrierExpr, scheme: Scheme, leaf_index: dict, ops: list) -> None:
    if isinstance(expr, Leaf):
        ops.append((kernels.OP_PUSH, leaf_index[id(expr)]))
    elif isinstance(expr, Not):
        _emit(expr.child, scheme, leaf_index, ops)
        ops.append((kernels.OP_NEG, 0))
    elif isinstance(expr, (And, Or)):
        negate = isinstance(expr, Or)
        for pos, child in enumerate(expr.children):
            _emit(child, scheme, leaf_index, ops)
            if negate:
                ops.append((kernels.OP_NEG, 0))
            if scheme is Scheme.POLYNOMIAL and pos > 0:
                ops.append((kernels.OP_MIN2, 0))
        if scheme is Scheme.LOGSUMEXP:
            ops.append((kernels.OP_MINLSE, len(expr.children)))
        if negate:
            ops.append((kernels.OP_NEG, 0))
    else:
        raise ConfigurationError(f"not a barrier expression: {expr!r}")


def _leaf_nodes(expr: BarrierExpr) -> list[Leaf]:
    if isinstance(expr, Leaf):
        return [expr]
    if isinstance(expr, Not):
        return _leaf_nodes(expr.child)
    return [leaf for c in expr.children for leaf in _leaf_nodes(c)]


class SmoothBarrier:
    """A barrier tree compiled for repeated smooth evaluation.

    Pair and obstacle leaves are evaluated inside the kernel backend selected
    by :mod:`safeswarm.kernels` (their constant Hessians are cached); custom
    leaves are called from Python before each evaluation.
    """

    def __init__(self, expr: BarrierExpr, cfg: SmoothingConfig, n_state: int, backend=None):
        self.expr = expr
        self.cfg = cfg
        self.n_state = int(n_state)
        self._kernel = kernels.get_backend(backend)
        nodes = _leaf_nodes(expr)
        self.leaves: list[AtomicBarrier] = [node.barrier for node in nodes]
        leaf_index = {id(node): pos for pos, node in enumerate(nodes)}
        ops: list = []
        _emit(expr, cfg.scheme, leaf_index, ops)
        self.ops = np.array(ops, dtype=np.int64).reshape(-1, 2)
        self._coeffs = transition_coefficients(cfg.k)
        self._compile_leaves()

    def _compile_leaves(self) -> None:
        n = self.n_state
        L = len(self.leaves)
        dims = {b.dim for b in self.leaves if b.kind is not BarrierKind.CUSTOM}
        if len(dims) > 1:
            raise ConfigurationError(f"leaves disagree on agent dimension: {sorted(dims)}")
        d = dims.pop() if dims else 1
        if n % d:
            raise ConfigurationError(f"state length {n} is not a multiple of agent dimension {d}")
        self.dim = d
        n_agents = n // d
        kind = np.full(L, kernels.LEAF_CUSTOM, dtype=np.int64)
        ai = np.zeros(L, dtype=np.int64)
        aj = np.zeros(L, dtype=np.int64)
        r2 = np.zeros(L)
        centers = np.zeros((L, d))
        slot = np.zeros(L, dtype=np.int64)
        hess = np.zeros((L, n, n))
        self._custom = []
        for row, b in enumerate(self.leaves):
            if b.kind is BarrierKind.CUSTOM:
                slot[row] = len(self._custom)
                self._custom.append(b)
                continue
            if max(b.agents) >= n_agents:
                raise ConfigurationError(f"{b.name}: agent index out of range for {n_agents} agents")
            hess[row] = b.hessian(np.zeros(n))
            ai[row] = b.agents[0]
            r2[row] = b.radius_sq
            if b.kind is BarrierKind.PAIR_DISTANCE:
                kind[row] = kernels.LEAF_PAIR
                aj[row] = b.agents[1]
            else:
                kind[row] = kernels.LEAF_OBSTACLE
                centers[row] = b.center
        self._spec = (kind, ai, aj, r2, centers, slot)
        self._static_hess = hess

    def _custom_terms(self, X: np.ndarray, order: int):
        T, n = X.shape
        C = len(self._custom)
        cval = np.zeros((T, C))
        cgrad = np.zeros((T, C, n))
        chess = np.zeros((T, C, n, n) if order >= 2 else (T, C, 0, 0))
        for c, b in enumerate(self._custom):
            for t in range(T):
                cval[t, c] = b.value(X[t])
                cgrad[t, c] = b.gradient(X[t])
                if order >= 2:
                    chess[t, c] = b.hessian(X[t])
        if order < 2 and C:
            chess = np.zeros((T, C, n, n))
        return cval, cgrad, chess

    def leaf_terms(self, x: np.ndarray):
        """Values ``(L,)`` and gradients ``(L, n)`` of all leaves, in program order."""
        X = self._as_batch(x)
        cval, cgrad, _ = self._custom_terms(X, 1)
        kind, ai, aj, r2, centers, slot = self._spec
        vals, grads = kernels.pure.leaf_batch(X, kind, ai, aj, r2, centers, slot, cval, cgrad)
        return vals[0], grads[0]

    def _as_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_state:
            raise ConfigurationError(
                f"state has shape {X.shape}, expected ({self.n_state},) or (T, {self.n_state})")
        return np.ascontiguousarray(X)

    def evaluate_batch(self, X, order: int = 2):
        """Values ``(T,)``, gradients ``(T, n)`` and Hessians ``(T, n, n)`` for stacked states."""
        if order >= 2 and self.cfg.scheme is Scheme.POLYNOMIAL and self.cfg.k < 2:
            raise ConfigurationError("Hessian requires C^2 smoothing, set k >= 2")
        X = self._as_batch(X)
        order = int(order)
        cval, cgrad, chess = self._custom_terms(X, order)
        kind, ai, aj, r2, centers, slot = self._spec
        V, G, H = self._kernel.eval_batch(
            self.ops, X, kind, ai, aj, r2, centers, slot, cval, cgrad, chess,
            self._static_hess, self.cfg.beta, self._coeffs, self.cfg.sharpness, order)
        if not (np.all(np.isfinite(V)) and np.all(np.isfinite(G))):
            raise NumericalError("smoothed barrier evaluated to a non-finite value")
        return V, G, H

    def evaluate(self, x, order: int = 2):
        """Return ``(value, gradient, Hessian)``; entries above ``order`` are ``None``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_state,):
            raise ConfigurationError(f"state has shape {x.shape}, expected ({self.n_state},)")
        V, G, H = self.evaluate_batch(x, order)
        return (float(V[0]), G[0] if order >= 1 else None, H[0] if order >= 2 else None)

    def value(self, x) -> float:
        return self.evaluate(x, 0)[0]

    def gradient(self, x) -> np.ndarray:
        return self.evaluate(x, 1)[1]

    def hessian(self, x) -> np.ndarray:
        return self.evaluate(x, 2)[2]


def _state_size(x) -> int:
    return int(np.asarray(x).size)


@functools.lru_cache(maxsize=64)
def _compiled(expr, cfg, n_state):
    return SmoothBarrier(expr, cfg, n_state)


def smooth_eval(expr: BarrierExpr, x, cfg: SmoothingConfig) -> float:
    return _compiled(expr, cfg, _state_size(x)).value(x)


def smooth_grad(expr: BarrierExpr, x, cfg: SmoothingConfig) -> np.ndarray:
    return _compiled(expr, cfg, _state_size(x)).gradient(x)


def smooth_hessian(expr: BarrierExpr, x, cfg: SmoothingConfig) -> np.ndarray:
    return _compiled(expr, cfg, _state_size(x)).hessian(x)


__all__ = [
    "Scheme", "SmoothingConfig", "TransitionPolynomial", "SmoothBarrier",
    "transition_coefficients", "phi_exact", "phi_smooth", "phi_smooth_derivatives",
    "smooth_min_pair", "transition_band_error", "smooth_eval", "smooth_grad", "smooth_hessian",
    "iter_leaves",
]
