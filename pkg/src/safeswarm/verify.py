"""Independent oracles and the runtime almost-sure-safety monitor.

The oracles deliberately avoid the code paths they check: integrals go
through adaptive quadrature or Gauss-Legendre rules, derivatives through
central differences, composition through an explicit-stack traversal, and
the QP through enumeration of active sets.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

from .barrier import And, BarrierExpr, KappaFunction, Leaf, Not
from .dynamics import EnsembleModel
from .qp import QPProblem
from .safety_filter import NoiseGeometry
from .smoothing import (Scheme, SmoothBarrier, SmoothingConfig, phi_smooth,
                        smooth_min_pair)

# Closed form of the L1 gap between sign and the k = 2 transition polynomial:
# 2 * beta * int_0^1 (1 - M(t)) dt = 2 * beta * 5/16.
L1_CONSTANT_K2 = 5.0 / 8.0
# The printed envelope for the same quantity.
L1_ENVELOPE_K2 = 15.0 / 4.0
# Closed form of int_{-beta}^{beta} |smooth_min - min| dl for k = 2:
# beta^2 * int_0^1 t (1 - M(t)) dt = beta^2 / 14.
PAIR_ERROR_CONSTANT_K2 = 1.0 / 14.0
PAIR_ERROR_ENVELOPE_K2 = 15.0 / 8.0


def l1_transition_error(beta: float, k: int = 2) -> float:
    """``int_{-beta}^{beta} |sign(l) - phi_hat(l)| dl`` by adaptive quadrature."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    cfg = SmoothingConfig(Scheme.POLYNOMIAL, beta, k)

    def gap(ell):
        return abs((1.0 if ell >= 0 else -1.0) - phi_smooth(ell, cfg))

    total = 0.0
    for a, b in ((-beta, 0.0), (0.0, beta)):
        val, _ = integrate.quad(gap, a, b, epsabs=1e-12, epsrel=1e-12, limit=200)
        total += val
    return total


@dataclass
class BoundReport:
    beta: float
    bound: float
    max_integral: float
    max_ratio: float
    violations: int
    pairs: int


def cbf_error_bound_check(pairs, beta: float, k: int = 2, nodes: int = 48) -> BoundReport:
    """Check ``int |smooth_min - min| dl <= 15 beta^2 / 8`` for each ``(h1, h2)`` pair.

    For a pair the line ``h1 + h2 = const`` is swept over ``l = h2 - h1`` in
    ``[-beta, beta]`` and the gap is integrated with Gauss-Legendre rules on
    each half-band (the integrand is polynomial there).
    """
    pairs = np.atleast_2d(np.asarray(pairs, dtype=float))
    cfg = SmoothingConfig(Scheme.POLYNOMIAL, beta, k)
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    ell = np.concatenate([0.5 * beta * (xg - 1.0), 0.5 * beta * (xg + 1.0)])
    wts = np.concatenate([0.5 * beta * wg, 0.5 * beta * wg])
    lp = pairs.sum(axis=1)[:, None]
    h1 = 0.5 * (lp - ell[None, :])
    h2 = 0.5 * (lp + ell[None, :])
    gap = np.abs(smooth_min_pair(h1, h2, cfg) - np.minimum(h1, h2))
    integrals = gap @ wts
    bound = PAIR_ERROR_ENVELOPE_K2 * beta ** 2
    return BoundReport(beta, bound, float(integrals.max(initial=0.0)),
                       float(integrals.max(initial=0.0) / bound),
                       int(np.sum(integrals > bound)), pairs.shape[0])


@dataclass
class MonitorResult:
    satisfied: bool
    lhs: float
    rhs: float
    h: float
    mu: float
    sigma_sq: float
    boundary: bool = False


def drift_diffusion(x, u, barrier: SmoothBarrier, model: EnsembleModel, noise: NoiseGeometry):
    """``(h, mu_h, ||sigma_h||^2)`` of the smoothed barrier at ``(x, u)``.

    ``mu_h`` includes the second-order noise term; ``||sigma_h||^2`` is the
    quadratic form of the barrier gradient with the same noise matrix.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    h, g, H = barrier.evaluate(x, 2)
    mu = float(g @ (model.F(x) + model.G(x) @ u) + 0.5 * np.sum(noise.D * H))
    sigma_sq = float(g @ noise.D @ g)
    return h, mu, sigma_sq


def safety_condition_monitor(x, u, barrier: SmoothBarrier, model: EnsembleModel,
                             noise: NoiseGeometry,
                             alpha_star: KappaFunction | None = None) -> MonitorResult:
    """Check ``mu_h - ||sigma_h||^2 / h >= -h^2 alpha_star(h)`` at ``(x, u)``."""
    alpha_star = alpha_star or KappaFunction(1.0, 1)
    h, mu, s2 = drift_diffusion(x, u, barrier, model, noise)
    if h <= 0:
        return MonitorResult(False, math.nan, math.nan, h, mu, s2, boundary=True)
    lhs = mu - s2 / h
    rhs = -h * h * alpha_star(h)
    return MonitorResult(bool(lhs >= rhs), lhs, rhs, h, mu, s2)


def fd_gradient_oracle(f, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar field."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def fd_hessian_oracle(grad, x, step: float = 1e-5) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrized."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        H[:, i] = (np.asarray(grad(x + e)) - np.asarray(grad(x - e))) / (2.0 * step)
    return 0.5 * (H + H.T)


def brute_min_oracle(tree: BarrierExpr, x) -> float:
    """Exact value of a composed barrier by explicit-stack traversal."""
    x = np.asarray(x, dtype=float)
    todo = [(tree, False)]
    vals: list[float] = []
    while todo:
        node, done = todo.pop()
        if isinstance(node, Leaf):
            vals.append(node.barrier.value(x))
        elif not done:
            todo.append((node, True))
            kids = (node.child,) if isinstance(node, Not) else node.children
            todo.extend((c, False) for c in reversed(kids))
        elif isinstance(node, Not):
            vals.append(-vals.pop())
        else:
            cnt = len(node.children)
            args = vals[-cnt:]
            del vals[-cnt:]
            vals.append(min(args) if isinstance(node, And) else max(args))
    return vals[0]


def kkt_enumeration_oracle(p: QPProblem, tol: float = 1e-9) -> np.ndarray | None:
    """Minimizer of a strictly convex QP by trying every candidate active set.

    Returns ``None`` when no active set yields a KKT point (infeasible).
    """
    C, d, _ = p.constraint_matrix()
    n, mc = p.n, C.shape[0]
    best, best_val = None, math.inf
    for size in range(min(n, mc) + 1):
        for S in itertools.combinations(range(mc), size):
            S = list(S)
            N = C[S].T
            K = np.block([[p.H, -N], [N.T, np.zeros((size, size))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-p.c, d[S]]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.all(C @ x - d >= -tol) and np.all(lam >= -tol):
                val = p.objective(x)
                if val < best_val:
                    best, best_val = x, val
    return best


def derivative_check(barrier: SmoothBarrier, states, fd_step: float = 1e-6,
                     hess_step: float = 1e-5):
    """Worst relative gradient and Hessian errors against finite differences."""
    g_err = h_err = 0.0
    for x in np.atleast_2d(states):
        _, g, H = barrier.evaluate(x, 2)
        g_fd = fd_gradient_oracle(barrier.value, x, fd_step)
        H_fd = fd_hessian_oracle(barrier.gradient, x, hess_step)
        g_err = max(g_err, np.linalg.norm(g - g_fd) / max(1.0, np.linalg.norm(g_fd)))
        h_err = max(h_err, np.linalg.norm(H - H_fd) / max(1.0, np.linalg.norm(H_fd)))
    return float(g_err), float(h_err)


def sample_smooth_states(barrier: SmoothBarrier, n: int, rng, box: float, min_gap: float = 0.0):
    """Random states whose smoothed barrier is at least ``min_gap`` from any pairwise fold kink.

    States are drawn uniformly in ``[-box, box]^n``; ``min_gap`` keeps finite
    differences away from the band edges where the second derivative jumps.
    """
    out = []
    beta = barrier.cfg.beta
    while len(out) < n:
        x = rng.uniform(-box, box, barrier.n_state)
        vals = _fold_gaps(barrier, x)
        if min_gap <= 0 or np.all(np.abs(np.abs(vals) - beta) > min_gap):
            out.append(x)
    return np.array(out)


def _fold_gaps(barrier: SmoothBarrier, x) -> np.ndarray:
    # Differences l = right - left seen by every pairwise fold of the program.
    vals, _ = barrier.leaf_terms(x)
    stack, gaps = [], []
    cfg = barrier.cfg
    for code, arg in barrier.ops:
        if code == 0:
            stack.append(vals[arg])
        elif code == 1:
            b, a = stack.pop(), stack.pop()
            gaps.append(b - a)
            stack.append(float(smooth_min_pair(a, b, cfg)))
        elif code == 2:
            args = stack[-arg:]
            del stack[-arg:]
            stack.append(float(np.min(args)))
        else:
            stack[-1] = -stack[-1]
    return np.array(gaps)


def verify_report(out_path=None, betas=(1.0, 0.5, 0.1), n_pairs: int = 10_000,
                  n_states: int = 200, seed: int = 0, scenario=None,
                  monitor_episode: bool = True) -> dict:
    """Run every oracle and return (and optionally write) the report dictionary."""
    from .harness import EpisodeOptions, run_episode
    from .mission import build_barrier_tree, load_bundled

    rng = np.random.default_rng(seed)
    report: dict = {"l1_transition_error": [], "pair_error_bound": []}
    for beta in betas:
        val = l1_transition_error(beta)
        report["l1_transition_error"].append({
            "beta": beta, "quadrature": val, "closed_form": L1_CONSTANT_K2 * beta,
            "envelope": L1_ENVELOPE_K2 * beta, "constant": val / beta,
            "scaling_ratio": l1_transition_error(2 * beta) / val,
        })
        pairs = rng.uniform(-5.0, 5.0, size=(n_pairs, 2))
        rep = cbf_error_bound_check(pairs, beta)
        report["pair_error_bound"].append({
            "beta": beta, "bound": rep.bound, "max_integral": rep.max_integral,
            "closed_form": PAIR_ERROR_CONSTANT_K2 * beta ** 2, "max_ratio": rep.max_ratio,
            "violations": rep.violations, "pairs": rep.pairs,
        })
    s = scenario if scenario is not None else load_bundled("multi_obstacle")
    barrier = SmoothBarrier(build_barrier_tree(s), s.smoothing(), 2 * s.n_agents)
    states = sample_smooth_states(barrier, n_states, rng, box=6.0, min_gap=1e-3)
    g_err, h_err = derivative_check(barrier, states)
    report["derivative_check"] = {"states": n_states, "gradient_rel_err": g_err,
                                  "hessian_rel_err": h_err}
    if monitor_episode:
        rec = run_episode(s, options=EpisodeOptions(inject_noise=False, monitor=True))
        ok = rec.monitor_lhs >= rec.monitor_rhs
        eligible = rec.h_smooth[:ok.size] >= 0.05
        report["monitor"] = {
            "steps": int(ok.size), "eligible_steps": int(eligible.sum()),
            "pass_rate": float(ok[eligible].mean()) if eligible.any() else None,
            "violations": int((~ok & eligible).sum()),
            "episode_status": rec.status,
        }
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
