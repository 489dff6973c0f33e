"""Atomic barrier functions and their Boolean composition.

A barrier expression is a finite tree whose leaves are twice-differentiable
scalar functions of the stacked ensemble state and whose internal nodes are
AND (pointwise min), OR (pointwise max) and NOT (negation). Exact evaluation
here is non-smooth; see :mod:`safeswarm.smoothing` for the smoothed version.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, Union

import numpy as np

from .exceptions import ConfigurationError


class BarrierKind(enum.Enum):
    PAIR_DISTANCE = "pair"
    OBSTACLE_DISTANCE = "obstacle"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class AtomicBarrier:
    """A single smooth constraint function of the ensemble state.

    ``PAIR_DISTANCE``:     h = ||x_i - x_j||^2 - radius_sq
    ``OBSTACLE_DISTANCE``: h = ||x_i - center||^2 - radius_sq
    ``CUSTOM``:            user supplied value, gradient and Hessian callables.

    ``dim`` is the per-agent state dimension used to locate agent blocks in
    the stacked state.
    """

    kind: BarrierKind
    agents: tuple[int, ...] = ()
    radius_sq: float = 0.0
    dim: int = 2
    center: tuple[float, ...] | None = None
    func: Callable[[np.ndarray], float] | None = None
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"agent state dimension must be positive, got {self.dim}")
        if self.kind is BarrierKind.PAIR_DISTANCE:
            if len(self.agents) != 2:
                raise ConfigurationError("pair barrier needs exactly two agent indices")
            i, j = self.agents
            if i == j:
                raise ConfigurationError(f"pair barrier with identical agents ({i}, {j})")
            if min(i, j) < 0:
                raise ConfigurationError("agent indices must be non-negative")
        elif self.kind is BarrierKind.OBSTACLE_DISTANCE:
            if len(self.agents) != 1 or self.agents[0] < 0:
                raise ConfigurationError("obstacle barrier needs one non-negative agent index")
            if self.center is None or len(self.center) != self.dim:
                raise ConfigurationError(f"obstacle center must have {self.dim} coordinates")
        else:
            if self.func is None or self.grad is None or self.hess is None:
                raise ConfigurationError(
                    "custom barriers must supply value, gradient and Hessian callables"
                )

    @classmethod
    def pair(cls, i: int, j: int, delta: float, dim: int = 2) -> "AtomicBarrier":
        return cls(BarrierKind.PAIR_DISTANCE, (int(i), int(j)), float(delta) ** 2, dim,
                   name=f"pair({i},{j})")

    @classmethod
    def obstacle(cls, i: int, center: Sequence[float], clearance: float, k: int | None = None
                 ) -> "AtomicBarrier":
        center = tuple(float(c) for c in center)
        label = f"obs({i},{k})" if k is not None else f"obs({i})"
        return cls(BarrierKind.OBSTACLE_DISTANCE, (int(i),), float(clearance) ** 2,
                   len(center), center=center, name=label)

    @classmethod
    def custom(cls, func, grad, hess, name: str = "custom") -> "AtomicBarrier":
        return cls(BarrierKind.CUSTOM, func=func, grad=grad, hess=hess, name=name)

    def _check(self, x: np.ndarray) -> None:
        if x.ndim != 1:
            raise ConfigurationError(f"state must be a vector, got shape {x.shape}")
        if self.kind is BarrierKind.CUSTOM:
            return
        if x.size % self.dim:
            raise ConfigurationError(
                f"state length {x.size} is not a multiple of agent dimension {self.dim}")
        if max(self.agents) >= x.size // self.dim:
            raise ConfigurationError(
                f"{self.name}: agent index out of range for state of length {x.size}")

    def _block(self, i: int) -> slice:
        return slice(i * self.dim, (i + 1) * self.dim)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        self._check(x)
        if self.kind is BarrierKind.PAIR_DISTANCE:
            diff = x[self._block(self.agents[0])] - x[self._block(self.agents[1])]
            return float(diff @ diff - self.radius_sq)
        if self.kind is BarrierKind.OBSTACLE_DISTANCE:
            diff = x[self._block(self.agents[0])] - np.asarray(self.center)
            return float(diff @ diff - self.radius_sq)
        return float(self.func(x))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self._check(x)
        if self.kind is BarrierKind.CUSTOM:
            g = np.asarray(self.grad(x), dtype=float)
            if g.shape != x.shape:
                raise ConfigurationError(f"{self.name}: gradient shape {g.shape} != {x.shape}")
            return g
        g = np.zeros_like(x)
        bi = self._block(self.agents[0])
        if self.kind is BarrierKind.PAIR_DISTANCE:
            bj = self._block(self.agents[1])
            diff = x[bi] - x[bj]
            g[bi] = 2.0 * diff
            g[bj] = -2.0 * diff
        else:
            g[bi] = 2.0 * (x[bi] - np.asarray(self.center))
        return g

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self._check(x)
        n = x.size
        if self.kind is BarrierKind.CUSTOM:
            H = np.asarray(self.hess(x), dtype=float)
            if H.shape != (n, n):
                raise ConfigurationError(f"{self.name}: Hessian shape {H.shape} != {(n, n)}")
            return H
        H = np.zeros((n, n))
        bi = self._block(self.agents[0])
        eye = 2.0 * np.eye(self.dim)
        H[bi, bi] = eye
        if self.kind is BarrierKind.PAIR_DISTANCE:
            bj = self._block(self.agents[1])
            H[bj, bj] = eye
            H[bi, bj] = -eye
            H[bj, bi] = -eye
        return H


@dataclass(frozen=True, eq=False)
class Leaf:
    barrier: AtomicBarrier


@dataclass(frozen=True, eq=False)
class And:
    children: tuple["BarrierExpr", ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ConfigurationError("And needs at least two children")


@dataclass(frozen=True, eq=False)
class Or:
    children: tuple["BarrierExpr", ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ConfigurationError("Or needs at least two children")


@dataclass(frozen=True, eq=False)
class Not:
    child: "BarrierExpr"


BarrierExpr = Union[Leaf, And, Or, Not]


@dataclass(frozen=True)
class KappaFunction:
    """Power-linear class-K function ``alpha(h) = gain**exponent * h``.

    The defaults (exponent 3) give the ``gamma^3 h`` form used by the safety
    filter; ``KappaFunction(1.0, 1)`` is the identity.
    """

    gain: float = 1.0
    exponent: int = 3

    def __post_init__(self):
        if not self.gain > 0:
            raise ConfigurationError(f"class-K gain must be positive, got {self.gain}")
        if self.exponent < 1:
            raise ConfigurationError(f"class-K exponent must be >= 1, got {self.exponent}")

    @property
    def slope(self) -> float:
        return self.gain ** self.exponent

    def __call__(self, h):
        return self.slope * h


def iter_leaves(expr: BarrierExpr) -> Iterator[AtomicBarrier]:
    """Yield atomic barriers in left-to-right order."""
    if isinstance(expr, Leaf):
        yield expr.barrier
    elif isinstance(expr, Not):
        yield from iter_leaves(expr.child)
    elif isinstance(expr, (And, Or)):
        for child in expr.children:
            yield from iter_leaves(child)
    else:
        raise ConfigurationError(f"not a barrier expression: {expr!r}")


def depth(expr: BarrierExpr) -> int:
    if isinstance(expr, Leaf):
        return 0
    if isinstance(expr, Not):
        return 1 + depth(expr.child)
    return 1 + max(depth(c) for c in expr.children)


def eval_exact(expr: BarrierExpr, x) -> float:
    """Exact (non-smooth) value of a composed barrier."""
    x = np.asarray(x, dtype=float)
    if isinstance(expr, Leaf):
        return expr.barrier.value(x)
    if isinstance(expr, And):
        return min(eval_exact(c, x) for c in expr.children)
    if isinstance(expr, Or):
        return max(eval_exact(c, x) for c in expr.children)
    if isinstance(expr, Not):
        return -eval_exact(expr.child, x)
    raise ConfigurationError(f"not a barrier expression: {expr!r}")


def in_safe_set(expr: BarrierExpr, x) -> bool:
    return eval_exact(expr, x) >= 0.0


def eval_atomic_grad(b: AtomicBarrier, x) -> np.ndarray:
    return b.gradient(x)


def eval_atomic_hessian(b: AtomicBarrier, x) -> np.ndarray:
    return b.hessian(x)
