"""End-to-end acceptance criteria.

Each test prints one ``[criterion N] PASS|FAIL ...`` line to the terminal
(bypassing output capture) and then asserts the same condition.
"""

import time

import numpy as np
import pytest

from safeswarm.harness import EpisodeOptions, export, run_episode, run_monte_carlo
from safeswarm.mission import build_barrier_tree
from safeswarm.qp import QPProblem, QPStatus, solve_qp
from safeswarm.smoothing import (SmoothBarrier, SmoothingConfig, TransitionPolynomial,
                                 smooth_min_pair)
from safeswarm.verify import (L1_ENVELOPE_K2, PAIR_ERROR_ENVELOPE_K2, cbf_error_bound_check,
                              derivative_check, kkt_enumeration_oracle, l1_transition_error,
                              sample_smooth_states, verify_report)

pytestmark = pytest.mark.acceptance

BETAS = (1.0, 0.5, 0.1)
MC_RUNS = 100


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _report


@pytest.fixture(scope="module")
def batches(multi_scenario):
    # Criteria 7-9 share the same two Monte Carlo batches.
    out = {}
    for scheme in ("poly", "lse"):
        out[scheme] = run_monte_carlo(multi_scenario.replace(scheme=scheme), MC_RUNS)
    return out


def test_c01_smoothing_exact_outside_band(report):
    rng = np.random.default_rng(1)
    beta = 0.1
    cfg = SmoothingConfig(beta=beta)
    h1 = rng.uniform(-10, 10, 100_000)
    gap = rng.uniform(beta * (1 + 1e-9), 5.0, h1.size) * rng.choice([-1.0, 1.0], h1.size)
    h2 = h1 + gap
    t0 = time.perf_counter()
    sm = smooth_min_pair(h1, h2, cfg)
    elapsed = time.perf_counter() - t0
    err = float(np.max(np.abs(sm - np.minimum(h1, h2))))
    ok = err <= 1e-12 and elapsed < 1.0
    assert report(1, ok, f"max |smooth - min| = {err:.2e} over 1e5 pairs in {elapsed*1e3:.1f} ms")


def test_c02_junction_smoothness(report):
    worst = 0.0
    for beta in BETAS:
        M = TransitionPolynomial(beta, 2)
        worst = max(worst, abs(M(beta) - 1.0), abs(M.derivative(beta, 1)),
                    abs(M.derivative(beta, 2)))
    assert report(2, worst <= 1e-10, f"max junction residual {worst:.2e}")


def test_c03_l1_scaling(report, tmp_path):
    ratios, within = [], True
    for beta in BETAS:
        v = l1_transition_error(beta)
        ratios.append(l1_transition_error(2 * beta) / v)
        within &= v <= L1_ENVELOPE_K2 * beta
    rep = verify_report(tmp_path / "verify_report.json", n_pairs=10, n_states=2,
                        monitor_episode=False)
    consts = [r["constant"] for r in rep["l1_transition_error"]]
    ok = within and all(abs(r - 2.0) <= 1e-6 for r in ratios) and len(consts) == len(BETAS)
    assert report(3, ok, f"ratios {np.round(ratios, 9).tolist()}, measured constant "
                         f"{consts[0]:.6f} (envelope {L1_ENVELOPE_K2})")


def test_c04_pair_error_bound(report):
    rng = np.random.default_rng(4)
    total, worst = 0, 0.0
    for beta in BETAS:
        rep = cbf_error_bound_check(rng.uniform(-5, 5, size=(10_000, 2)), beta)
        total += rep.violations
        worst = max(worst, rep.max_ratio)
    assert report(4, total == 0, f"violations {total}, max integral / (15 beta^2 / 8) = "
                                 f"{worst:.4f}")
    assert PAIR_ERROR_ENVELOPE_K2 == 15 / 8


def test_c05_derivative_oracles(report, multi_scenario):
    rng = np.random.default_rng(5)
    sb = SmoothBarrier(build_barrier_tree(multi_scenario), multi_scenario.smoothing(),
                       2 * multi_scenario.n_agents)
    X = sample_smooth_states(sb, 1000, rng, box=6.0, min_gap=1e-3)
    g_err, h_err = derivative_check(sb, X)
    ok = g_err <= 1e-6 and h_err <= 1e-4
    assert report(5, ok, f"gradient rel err {g_err:.2e}, Hessian rel err {h_err:.2e}")


def test_c06_qp_matches_enumeration(report):
    rng = np.random.default_rng(6)
    worst, bad = 0.0, 0
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        m = int(rng.integers(0, 9))
        M = rng.normal(size=(n, n))
        H = M @ M.T + 0.1 * np.eye(n)
        A = rng.normal(size=(m, n))
        b = A @ rng.uniform(-1, 1, n) - rng.exponential(size=m) * (rng.random(m) < 0.7)
        p = QPProblem(H, 3 * rng.normal(size=n), A, b)
        sol = solve_qp(p)
        ref = kkt_enumeration_oracle(p)
        if sol.status is not QPStatus.OPTIMAL or ref is None:
            bad += 1
            continue
        worst = max(worst, float(np.max(np.abs(sol.x - ref))))
    ok = bad == 0 and worst <= 1e-6
    assert report(6, ok, f"max |x - x_enum| = {worst:.2e} over 1000 QPs, mismatched status {bad}")


def test_c07_monte_carlo_safety(report, batches):
    b = batches["poly"]
    ok = b.safe_count >= 99
    assert report(7, ok, f"safe runs {b.safe_count}/{b.runs}, worst min h "
                         f"{np.min(b.min_h):.4f}, aborted {int(b.aborted.sum())}")


def test_c08_goal_reaching(report, batches):
    b = batches["poly"]
    live = ~b.aborted
    ok = bool(np.all(b.reached[live]))
    assert report(8, ok, f"reached {int(b.reached[live].sum())}/{int(live.sum())} "
                         f"non-aborted runs")


def test_c09_poly_not_more_aggressive_than_lse(report, batches):
    poly = float(batches["poly"].deviations.sum())
    lse = float(batches["lse"].deviations.sum())
    assert report(9, poly <= lse, f"sum ||u_f - u_d||: poly {poly:.2f}, lse {lse:.2f}")


def test_c10_timing_trend(report, multi_scenario):
    means = []
    for T in (10, 20, 30):
        rec = run_episode(multi_scenario.replace(horizon=T))
        means.append(float(np.mean(rec.solve_times)) * 1e3)
    ok = all(a <= b for a, b in zip(means, means[1:])) and means[-1] < 100.0
    assert report(10, ok, "mean solve ms for T_u 10/20/30: "
                          + ", ".join(f"{m:.2f}" for m in means))


def test_c11_monitor(report, multi_scenario):
    rec = run_episode(multi_scenario, options=EpisodeOptions(inject_noise=False, monitor=True))
    held = rec.monitor_lhs >= rec.monitor_rhs
    eligible = rec.h_smooth >= 0.05
    violations = int(np.sum(eligible & ~held))
    ok = violations == 0 and eligible.any() and not rec.aborted
    assert report(11, ok, f"violations {violations} over {int(eligible.sum())} eligible steps")


def test_c12_reproducible_exports(report, tmp_path, multi_scenario):
    s = multi_scenario.replace(t_max=200)
    files = {}
    for name in ("a", "b"):
        paths = export(run_monte_carlo(s, 1), tmp_path / name)
        files[name] = {p.relative_to(tmp_path / name): p.read_bytes() for p in paths}
    ok = files["a"] == files["b"] and len(files["a"]) == 7
    assert report(12, ok, f"{len(files['a'])} files byte-identical across two runs")
