"""Reach-avoid scenarios: schema, validation and barrier-tree construction.

A scenario file is YAML with exactly these top-level keys (all but
``n_agents``, ``starts`` and ``goals`` have defaults)::

    n_agents   int          number of planar agents
    starts     [[x, y]]     one start per agent (m)
    goals      [[x, y]]     one goal per agent (m)
    obstacles  [{center: [x, y], radius: r}]   disk obstacles (m)
    delta      float        inter-agent clearance (m)
    delta_o    float        clearance kept from each obstacle's rim (m), must exceed delta
    eps_g      float        radius of the stacked goal ball (m)
    sigma_w    float | [s1, s2] | 2x2      disturbance covariance (scalar means s*I)
    k_w        float | 2x2  disturbance gain (scalar means k*I)
    beta       float        smoothing half-width
    scheme     poly | lse
    k_smooth   int          smoothness order of the transition polynomial
    horizon    int          control horizon T_u (steps)
    t_max      int          step cap
    dt         float        step length (s)
    u_max      float        componentwise input bound
    gamma      float        class-K gain, alpha(h) = gamma^3 h
    delta_h    float        chance-constraint violation probability
    k_p        float        proportional gain of the nominal controller
    seed       int          base random seed
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .barrier import And, AtomicBarrier, BarrierExpr, KappaFunction, Leaf
from .dynamics import EnsembleModel, NoiseModel, builtin_single_integrator
from .exceptions import ConfigurationError
from .safety_filter import ChanceSpec, NominalController
from .smoothing import Scheme, SmoothingConfig

SCHEMA_KEYS = (
    "n_agents", "starts", "goals", "obstacles", "delta", "delta_o", "eps_g", "sigma_w", "k_w",
    "beta", "scheme", "k_smooth", "horizon", "t_max", "dt", "u_max", "gamma", "delta_h", "k_p",
    "seed",
)
REQUIRED_KEYS = ("n_agents", "starts", "goals")


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    radius: float = 0.0


@dataclass(frozen=True)
class Scenario:
    n_agents: int
    starts: tuple[tuple[float, float], ...]
    goals: tuple[tuple[float, float], ...]
    obstacles: tuple[Obstacle, ...] = ()
    delta: float = 0.14
    delta_o: float = 0.15
    eps_g: float = 0.05
    sigma_w: tuple[tuple[float, ...], ...] = ((0.1, 0.0), (0.0, 0.1))
    k_w: tuple[tuple[float, ...], ...] = ((1.0, 0.0), (0.0, 1.0))
    beta: float = 0.1
    scheme: str = "poly"
    k_smooth: int = 2
    horizon: int = 10
    t_max: int = 600
    dt: float = 0.05
    u_max: float = 2.0
    gamma: float = 1.0
    delta_h: float = 0.01
    k_p: float = 1.0
    seed: int = 0

    @property
    def x0(self) -> np.ndarray:
        return np.array(self.starts, dtype=float).ravel()

    @property
    def x_goal(self) -> np.ndarray:
        return np.array(self.goals, dtype=float).ravel()

    def replace(self, **changes) -> "Scenario":
        return _normalize(dataclasses.replace(self, **changes))

    def smoothing(self) -> SmoothingConfig:
        return SmoothingConfig(Scheme(self.scheme), self.beta, self.k_smooth)

    def model(self) -> EnsembleModel:
        return builtin_single_integrator(self.n_agents, np.array(self.k_w))

    def noise(self, seed: int | None = None) -> NoiseModel:
        S = np.array(self.sigma_w)
        return NoiseModel(S, sigma_max=max(1.0, float(np.max(S))),
                          seed=self.seed if seed is None else seed)

    def controller(self, paper_literal_sign: bool = False) -> NominalController:
        return NominalController(self.k_p, self.x_goal, True, paper_literal_sign, self.u_max)

    def chance(self) -> ChanceSpec:
        return ChanceSpec(self.delta_h)

    def alpha(self) -> KappaFunction:
        return KappaFunction(self.gamma, 3)


def _matrix(value, name: str) -> tuple[tuple[float, ...], ...]:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(2)
    elif arr.ndim == 1:
        if arr.size != 2:
            raise ConfigurationError(f"{name}: expected a scalar, 2 diagonal entries or a 2x2 matrix")
        arr = np.diag(arr)
    if arr.shape != (2, 2):
        raise ConfigurationError(f"{name}: expected a 2x2 matrix, got shape {arr.shape}")
    return tuple(tuple(float(v) for v in row) for row in arr)


def _points(value, name: str) -> tuple[tuple[float, float], ...]:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name}: expected a list of [x, y] points") from None
    if arr.size == 0:
        return ()
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigurationError(f"{name}: expected a list of [x, y] points, got shape {arr.shape}")
    return tuple((float(a), float(b)) for a, b in arr)


def _obstacles(value) -> tuple[Obstacle, ...]:
    out = []
    for k, item in enumerate(value or ()):
        if isinstance(item, Obstacle):
            out.append(item)
            continue
        if not isinstance(item, dict) or "center" not in item or set(item) - {"center", "radius"}:
            raise ConfigurationError(f"obstacles[{k}]: expected {{center: [x, y], radius: r}}")
        c = _points([item["center"]], f"obstacles[{k}].center")[0]
        out.append(Obstacle(c, float(item.get("radius", 0.0))))
    return tuple(out)


def _normalize(s: Scenario) -> Scenario:
    return dataclasses.replace(
        s,
        n_agents=int(s.n_agents),
        starts=_points(s.starts, "starts"),
        goals=_points(s.goals, "goals"),
        obstacles=_obstacles(s.obstacles),
        sigma_w=_matrix(s.sigma_w, "sigma_w"),
        k_w=_matrix(s.k_w, "k_w"),
        scheme=Scheme(s.scheme).value if s.scheme in ("poly", "lse") else str(s.scheme),
        k_smooth=int(s.k_smooth), horizon=int(s.horizon), t_max=int(s.t_max), seed=int(s.seed),
        **{k: float(getattr(s, k)) for k in
           ("delta", "delta_o", "eps_g", "beta", "dt", "u_max", "gamma", "delta_h", "k_p")},
    )


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigurationError("scenario file must contain a mapping at top level")
    unknown = sorted(set(data) - set(SCHEMA_KEYS))
    if unknown:
        raise ConfigurationError(f"unknown scenario keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED_KEYS if k not in data]
    if missing:
        raise ConfigurationError(f"missing scenario keys: {', '.join(missing)}")
    try:
        return _normalize(Scenario(**data))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed scenario: {exc}") from None


def scenario_to_dict(s: Scenario) -> dict:
    out = {}
    for key in SCHEMA_KEYS:
        v = getattr(s, key)
        if key in ("starts", "goals", "sigma_w", "k_w"):
            v = [list(p) for p in v]
        elif key == "obstacles":
            v = [{"center": list(o.center), "radius": o.radius} for o in v]
        out[key] = v
    return out


def load_scenario(path, check: bool = True) -> Scenario:
    """Read a scenario file; with ``check`` any invariant violation raises."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML: {exc}") from None
    s = scenario_from_dict(data)
    if check:
        problems = validate(s)
        if problems:
            raise ConfigurationError("; ".join(problems))
    return s


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(s), sort_keys=False))


def bundled_scenario_path(name: str) -> Path:
    fname = name if name.endswith(".yaml") else f"{name.replace('-', '_')}.yaml"
    ref = resources.files("safeswarm") / "scenarios" / fname
    if not ref.is_file():
        raise ConfigurationError(f"no bundled scenario named {name!r}")
    return Path(str(ref))


def load_bundled(name: str) -> Scenario:
    return load_scenario(bundled_scenario_path(name))


def validate(s: Scenario) -> list[str]:
    """Return human-readable invariant violations (empty when the scenario is usable)."""
    v: list[str] = []
    if s.n_agents < 1:
        v.append("n_agents: must be >= 1")
    if len(s.starts) != s.n_agents:
        v.append(f"starts: expected {s.n_agents} points, got {len(s.starts)}")
    if len(s.goals) != s.n_agents:
        v.append(f"goals: expected {s.n_agents} points, got {len(s.goals)}")
    for key in ("delta", "delta_o", "eps_g", "beta", "dt", "u_max", "gamma", "k_p"):
        val = getattr(s, key)
        if not (val > 0 and math.isfinite(val)):
            v.append(f"{key}: must be positive and finite, got {val}")
    if not s.delta_o > s.delta:
        v.append(f"delta_o: C2 ordering violated, need delta_o > delta ({s.delta_o} <= {s.delta})")
    if not 0.0 < s.delta_h < 1.0:
        v.append(f"delta_h: must lie in (0, 1), got {s.delta_h}")
    if s.scheme not in ("poly", "lse"):
        v.append(f"scheme: must be 'poly' or 'lse', got {s.scheme!r}")
    if s.k_smooth < 2:
        v.append(f"k_smooth: the filter needs a C^2 barrier, got k_smooth = {s.k_smooth}")
    if s.horizon < 1:
        v.append(f"horizon: must be >= 1, got {s.horizon}")
    if s.t_max < 0:
        v.append(f"t_max: must be >= 0, got {s.t_max}")
    if s.seed < 0:
        v.append(f"seed: must be non-negative, got {s.seed}")
    S = np.array(s.sigma_w)
    if np.any(S != np.diag(np.diag(S))) or np.any(np.diag(S) <= 0):
        v.append("sigma_w: covariance must be diagonal with positive entries")
    K = np.array(s.k_w)
    if not np.allclose(K, K.T) or np.any(np.linalg.eigvalsh(0.5 * (K + K.T)) <= 0):
        v.append("k_w: gain must be symmetric positive definite")
    for k, o in enumerate(s.obstacles):
        if not o.radius >= 0:
            v.append(f"obstacles[{k}].radius: must be non-negative, got {o.radius}")
    if len(s.starts) == s.n_agents:
        P = np.array(s.starts, dtype=float).reshape(-1, 2)
        for i in range(s.n_agents):
            for j in range(i + 1, s.n_agents):
                if not np.linalg.norm(P[i] - P[j]) > s.delta:
                    v.append(f"starts[{i}], starts[{j}]: initial state not interior "
                             f"(separation <= delta)")
            for k, o in enumerate(s.obstacles):
                if not np.linalg.norm(P[i] - np.asarray(o.center)) > o.radius + s.delta_o:
                    v.append(f"starts[{i}]: initial state not interior "
                             f"(within delta_o of obstacle {k})")
    if s.n_agents == 1 and not s.obstacles:
        v.append("obstacles: a single agent with no obstacles has no constraint to enforce")
    return v


def _conj(leaves: list[Leaf]) -> BarrierExpr:
    return leaves[0] if len(leaves) == 1 else And(tuple(leaves))


def build_barrier_tree(s: Scenario) -> BarrierExpr:
    """``h = h_pairs AND h_obstacles`` with pairs ordered by (i, j) and obstacles by (i, k)."""
    pairs = [Leaf(AtomicBarrier.pair(i, j, s.delta))
             for i in range(s.n_agents) for j in range(i + 1, s.n_agents)]
    obs = [Leaf(AtomicBarrier.obstacle(i, o.center, o.radius + s.delta_o, k))
           for i in range(s.n_agents) for k, o in enumerate(s.obstacles)]
    parts = [_conj(group) for group in (pairs, obs) if group]
    if not parts:
        raise ConfigurationError("degenerate barrier tree: one agent and no obstacles")
    return parts[0] if len(parts) == 1 else And(tuple(parts))
