import json

import numpy as np
import pytest

from safeswarm.harness import (EpisodeOptions, export, run_episode, run_monte_carlo)
from safeswarm.mission import scenario_from_dict
from safeswarm.verify import PAIR_ERROR_ENVELOPE_K2

QUIET = EpisodeOptions(inject_noise=False)


def open_field(**kw):
    data = dict(n_agents=2, starts=[[0, 0], [0, 5]], goals=[[3, 0], [3, 5]],
                obstacles=[{"center": [40, 40]}], eps_g=0.05, k_p=1.0, t_max=300)
    data.update(kw)
    return scenario_from_dict(data)


def test_zero_step_budget():
    rec = run_episode(open_field(t_max=0), options=QUIET)
    assert rec.trajectory.shape == (0, 4)
    assert rec.controls.shape == (0, 4)
    assert rec.reached_at is None
    assert rec.steps == 0


def test_open_field_descends_to_goal():
    s = open_field()
    rec = run_episode(s, options=QUIET)
    dist = np.linalg.norm(rec.states - s.x_goal, axis=1)
    assert np.all(np.diff(dist) < 0)
    assert rec.reached_at is not None and rec.reached_at == rec.steps
    assert dist[-1] <= s.eps_g
    assert rec.safe
    assert np.allclose(rec.controls, rec.nominal_controls)


def test_record_lengths(single_scenario):
    rec = run_episode(single_scenario.replace(t_max=40))
    T = rec.steps
    for arr in (rec.trajectory, rec.nominal_controls, rec.h_exact, rec.h_smooth, rec.margins,
                rec.solve_times):
        assert arr.shape[0] == T
    assert T <= 40
    assert rec.reached_at is None


def test_smoothed_value_close_to_exact(single_scenario):
    rec = run_episode(single_scenario)
    beta = single_scenario.beta
    assert np.all(rec.h_smooth >= rec.h_exact - PAIR_ERROR_ENVELOPE_K2 * beta ** 2)
    # the polynomial fold never undershoots the pairwise min; each fold adds at most beta / 2
    n_folds = 2
    assert np.all(rec.h_smooth >= rec.h_exact - 1e-12)
    assert np.all(rec.h_smooth <= rec.h_exact + n_folds * beta / 2)


def test_single_obstacle_episode(single_scenario):
    rec = run_episode(single_scenario)
    assert rec.status == "reached"
    assert rec.safe
    assert np.all(rec.margins >= -1e-8)
    assert np.all(np.abs(rec.controls) <= single_scenario.u_max + 1e-9)


def test_batch_of_one_matches_record(single_scenario):
    s = single_scenario.replace(t_max=30)
    batch = run_monte_carlo(s, 1)
    rec = run_episode(s, seed=s.seed)
    assert batch.min_h[0] == rec.min_h
    assert batch.summary()["control_deviation_total"] == rec.deviation
    assert np.array_equal(batch.records[0].trajectory, rec.trajectory)


def test_seeds_consecutive(single_scenario):
    batch = run_monte_carlo(single_scenario.replace(t_max=5), 3, base_seed=10)
    assert batch.seeds == [10, 11, 12]
    assert not np.array_equal(batch.records[0].trajectory, batch.records[1].trajectory)


def test_empty_batch_exports_headers(tmp_path, single_scenario):
    batch = run_monte_carlo(single_scenario, 0)
    export(batch, tmp_path)
    assert (tmp_path / "envelope.csv").read_text().count("\n") == 1
    assert json.loads((tmp_path / "summary.json").read_text())["runs"] == 0


def test_export_round_trip(tmp_path, single_scenario):
    rec = run_episode(single_scenario.replace(t_max=25))
    export(rec, tmp_path)
    traj = np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=1)
    assert traj.shape == (rec.steps + 1, 5)
    assert np.array_equal(traj[:, 1:], rec.states)
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,p_x_0,p_y_0,p_x_1,p_y_1"
    cbf = np.loadtxt(tmp_path / "cbf.csv", delimiter=",", skiprows=1)
    assert np.array_equal(cbf[:, 1], rec.h_exact)
    ctl = np.loadtxt(tmp_path / "controls.csv", delimiter=",", skiprows=1)
    assert np.allclose(ctl[:, 2], np.linalg.norm(rec.controls, axis=1))
    summ = json.loads((tmp_path / "summary.json").read_text())
    assert summ["steps"] == rec.steps and "mean_solve_time_s" not in summ


def test_exports_reproducible(tmp_path, single_scenario):
    s = single_scenario.replace(t_max=60)
    for name in ("a", "b"):
        export(run_monte_carlo(s, 2), tmp_path / name)
    for f in ("envelope.csv", "runs.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_envelope_bounds(single_scenario):
    batch = run_monte_carlo(single_scenario.replace(t_max=20), 3)
    count, lo, hi = batch.envelope()
    assert np.all(count == 3)
    for r in batch.records:
        S = r.states
        assert np.all(lo[:len(S)] <= S) and np.all(S <= hi[:len(S)])


def test_aborted_episode_recorded(tmp_path, single_scenario):
    # the unscaled Itô term makes the rows unsatisfiable once agents near the obstacle
    rec = run_episode(single_scenario, options=EpisodeOptions(ito="literal"))
    assert rec.aborted
    assert rec.status == "Infeasible"
    assert np.all(np.isnan(rec.controls[-1]))
    assert rec.reached_at is None
    assert np.isfinite(rec.deviation)
    export(rec, tmp_path)
    json.loads((tmp_path / "summary.json").read_text(), parse_constant=lambda c: 1 / 0)
