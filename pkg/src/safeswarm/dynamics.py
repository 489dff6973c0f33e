"""Control-affine agent and ensemble dynamics with additive Gaussian input noise.

Each agent follows ``dx_i = (f(x_i) + g(x_i) u_i) dt + K_w dw_i``. The
ensemble stacks ``N`` identical agents; the disturbance gain is stacked as
``kron(K_w, I_N)``. Time stepping is explicit Euler-Maruyama with the
disturbance entering as a velocity perturbation held over the step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import ConfigurationError


@dataclass(frozen=True, eq=False)
class AgentModel:
    d: int
    m: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    K_w: np.ndarray
    lipschitz: float | None = None
    name: str = "agent"

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ConfigurationError(f"state/control dimensions must be positive ({self.d}, {self.m})")
        K = np.array(self.K_w, dtype=float)
        if K.shape != (self.d, self.d):
            raise ConfigurationError(f"K_w must be {self.d}x{self.d}, got {K.shape}")
        try:
            np.linalg.cholesky(0.5 * (K + K.T))
        except np.linalg.LinAlgError:
            raise ConfigurationError("K_w must be positive definite") from None
        if not np.allclose(K, K.T):
            raise ConfigurationError("K_w must be symmetric")
        K.setflags(write=False)
        object.__setattr__(self, "K_w", K)


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    """``N`` identical agents stacked into one system of dimension ``N*d``.

    ``K_ens = kron(K_w, I_N)``. For a non-diagonal ``K_w`` this mixes agent
    blocks in the stacked ``[x_1; ...; x_N]`` ordering; for diagonal gains it
    reduces to scaling each coordinate.
    """

    agent: AgentModel
    N: int
    _K_ens: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError(f"agent count must be >= 1, got {self.N}")
        K = np.kron(self.agent.K_w, np.eye(self.N))
        K.setflags(write=False)
        object.__setattr__(self, "_K_ens", K)

    @property
    def n(self) -> int:
        return self.N * self.agent.d

    @property
    def nu(self) -> int:
        return self.N * self.agent.m

    @property
    def K_ens(self) -> np.ndarray:
        return self._K_ens

    def _blocks(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ConfigurationError(f"state has shape {x.shape}, expected ({self.n},)")
        return x.reshape(self.N, self.agent.d)

    def F(self, x) -> np.ndarray:
        X = self._blocks(x)
        return np.concatenate([np.asarray(self.agent.f(xi), dtype=float) for xi in X])

    def G(self, x) -> np.ndarray:
        X = self._blocks(x)
        d, m = self.agent.d, self.agent.m
        out = np.zeros((self.n, self.nu))
        for i, xi in enumerate(X):
            out[i * d:(i + 1) * d, i * m:(i + 1) * m] = self.agent.g(xi)
        return out


@dataclass(eq=False)
class NoiseModel:
    """Zero-mean Gaussian disturbance with diagonal covariance and a seeded generator."""

    covariance: np.ndarray
    sigma_max: float = 1.0
    seed: int = 0
    allow_degenerate: bool = False
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        S = np.atleast_2d(np.array(self.covariance, dtype=float))
        if S.shape[0] != S.shape[1]:
            raise ConfigurationError(f"covariance must be square, got {S.shape}")
        if np.any(S != np.diag(np.diag(S))):
            raise ConfigurationError("covariance must be diagonal")
        diag = np.diag(S)
        if np.any(diag < 0) or (not self.allow_degenerate and np.any(diag <= 0)):
            raise ConfigurationError("covariance diagonal must be positive")
        if np.any(diag > self.sigma_max):
            raise ConfigurationError(
                f"covariance entry {diag.max()} exceeds sigma_max {self.sigma_max}")
        self.covariance = S
        self.rng = np.random.default_rng(int(self.seed))

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def reseed(self, seed: int) -> None:
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)


def sample_disturbance(noise: NoiseModel, N: int) -> np.ndarray:
    """One stacked draw ``w`` of length ``N*d``; agent blocks are i.i.d. N(0, Sigma_w)."""
    z = noise.rng.standard_normal((N, noise.dim))
    return (z * noise.std).ravel()


def ensemble_covariance(noise: NoiseModel, N: int) -> np.ndarray:
    """Covariance of the stacked disturbance, ``I_N kron Sigma_w``."""
    return np.kron(np.eye(N), noise.covariance)


def step(model: EnsembleModel, x, u, w, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if u.shape != (model.nu,):
        raise ConfigurationError(f"control has shape {u.shape}, expected ({model.nu},)")
    if w.shape != (model.n,):
        raise ConfigurationError(f"disturbance has shape {w.shape}, expected ({model.n},)")
    return x + dt * (model.F(x) + model.G(x) @ u) + dt * (model.K_ens @ w)


def _zero_drift(x):
    return np.zeros_like(x)


def builtin_single_integrator(N: int, K_w=None) -> EnsembleModel:
    """Planar single integrators: ``f = 0``, ``g = I_2``, ``K_w = I_2`` unless given."""
    eye = np.eye(2)
    agent = AgentModel(2, 2, _zero_drift, lambda x: eye,
                       eye if K_w is None else np.asarray(K_w, dtype=float),
                       lipschitz=0.0, name="single_integrator")
    return EnsembleModel(agent, int(N))
