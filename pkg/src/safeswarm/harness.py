"""Receding-horizon episodes, Monte Carlo batches and CSV/JSON export.

Each iteration reads the full state, draws one disturbance sample, rolls the
nominal controller over the horizon, solves the safety QP, applies the first
filtered control and shifts the rest of the sequence forward. The episode
ends when the stacked state enters the goal ball, at the step cap, or when
the QP fails (the failure is recorded; there is no fallback to the nominal
control).
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barrier import eval_exact
from .dynamics import sample_disturbance, step
from .mission import Scenario, build_barrier_tree
from .qp import QPStatus
from .safety_filter import ItoScaling, NoiseGeometry, filter_controls
from .smoothing import SmoothBarrier


@dataclass
class EpisodeOptions:
    inject_noise: bool = True
    paper_literal_sign: bool = False
    ito: str = ItoScaling.DT_COVARIANCE.value
    warm_start: bool = True
    monitor: bool = False
    backend: str | None = None


@dataclass
class RunRecord:
    """One episode. Row ``t`` of every per-step array refers to the state at which control ``t`` was applied."""

    trajectory: np.ndarray
    controls: np.ndarray
    nominal_controls: np.ndarray
    h_exact: np.ndarray
    h_smooth: np.ndarray
    margins: np.ndarray
    solve_times: np.ndarray
    final_state: np.ndarray
    final_h_exact: float
    reached_at: int | None
    seed: int
    dt: float
    n_agents: int
    status: str = "completed"
    aborted_at: int | None = None
    monitor_lhs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    monitor_rhs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def steps(self) -> int:
        return self.controls.shape[0]

    @property
    def states(self) -> np.ndarray:
        """All visited states, including the final one."""
        return np.vstack([self.trajectory, self.final_state[None]])

    @property
    def min_h(self) -> float:
        vals = np.append(self.h_exact, self.final_h_exact)
        return float(np.min(vals))

    @property
    def safe(self) -> bool:
        return self.min_h > 0.0

    @property
    def aborted(self) -> bool:
        return self.aborted_at is not None

    @property
    def deviation(self) -> float:
        """Sum over applied steps of ``||u_filtered - u_nominal||`` (an aborted step is skipped)."""
        if not self.steps:
            return 0.0
        return float(np.nansum(np.linalg.norm(self.controls - self.nominal_controls, axis=1)))

    def summary(self, include_timing: bool = False) -> dict:
        out = {
            "seed": self.seed,
            "status": self.status,
            "steps": self.steps,
            "reached_at": self.reached_at,
            "aborted_at": self.aborted_at,
            "min_h_exact": self.min_h if math.isfinite(self.min_h) else None,
            "min_margin": (float(np.nanmin(self.margins))
                           if np.any(np.isfinite(self.margins)) else None),
            "safe": self.safe,
            "control_deviation": self.deviation,
        }
        if include_timing:
            out["mean_solve_time_s"] = float(np.mean(self.solve_times)) if self.steps else None
        return out


def _shift_hint(active: list[int], U: np.ndarray, u_max: float) -> list[int]:
    # Active set of the shifted sequence [u1, ..., u_{T-1}, u0]: rows move one
    # step earlier, the refilled tail inherits step 0.
    T, m = U.shape
    nvar = T * m
    shifted = np.vstack([U[1:], U[:1]]).ravel()
    hint = sorted({(r - 1) % T for r in active if r < T})
    at_lo = np.flatnonzero(np.isclose(shifted, -u_max))
    at_hi = np.flatnonzero(np.isclose(shifted, u_max))
    return hint + [T + i for i in at_lo] + [T + nvar + i for i in at_hi]


def run_episode(s: Scenario, seed: int | None = None,
                options: EpisodeOptions | None = None) -> RunRecord:
    opts = options or EpisodeOptions()
    seed = s.seed if seed is None else int(seed)
    model = s.model()
    noise = s.noise(seed)
    expr = build_barrier_tree(s)
    barrier = SmoothBarrier(expr, s.smoothing(), model.n, backend=opts.backend)
    geom = NoiseGeometry.build(model, noise.covariance, s.dt, opts.ito)
    ctrl = s.controller(opts.paper_literal_sign)
    chance = s.chance()
    alpha = s.alpha()
    if opts.monitor:
        from .verify import safety_condition_monitor

    x = s.x0
    goal = s.x_goal
    traj, ctrls, noms, hex_, hsm, margins, times, mon_l, mon_r = ([] for _ in range(9))
    reached = None
    status = "completed"
    aborted = None
    hint = None
    for t in range(s.t_max + 1):
        if np.linalg.norm(x - goal) <= s.eps_g:
            reached = t
            status = "reached"
            break
        if t == s.t_max:
            break
        w = sample_disturbance(noise, model.N)
        if not opts.inject_noise:
            w = np.zeros_like(w)
        res = filter_controls(x, barrier, model, ctrl, chance, geom, s.horizon, s.u_max, w,
                              alpha, s.dt, s.eps_g, active_hint=hint)
        traj.append(x)
        noms.append(res.u_nominal[0])
        hex_.append(eval_exact(expr, x))
        hsm.append(res.h_pred[0])
        times.append(res.solve_time)
        if res.status is not QPStatus.OPTIMAL:
            ctrls.append(np.full(model.nu, np.nan))
            margins.append(np.nan)
            if opts.monitor:
                mon_l.append(np.nan)
                mon_r.append(np.nan)
            status = res.status.value
            aborted = t
            break
        u = res.u_seq[0]
        ctrls.append(u)
        margins.append(res.margins[0])
        if opts.monitor:
            m = safety_condition_monitor(x, u, barrier, model, geom)
            mon_l.append(m.lhs)
            mon_r.append(m.rhs)
        if opts.warm_start:
            hint = _shift_hint(res.active, res.u_seq, s.u_max)
        x = step(model, x, u, w, s.dt)

    n, nu = model.n, model.nu
    return RunRecord(
        trajectory=np.array(traj).reshape(-1, n),
        controls=np.array(ctrls).reshape(-1, nu),
        nominal_controls=np.array(noms).reshape(-1, nu),
        h_exact=np.array(hex_, dtype=float),
        h_smooth=np.array(hsm, dtype=float),
        margins=np.array(margins, dtype=float),
        solve_times=np.array(times, dtype=float),
        final_state=np.asarray(x, dtype=float),
        final_h_exact=eval_exact(expr, x),
        reached_at=reached,
        seed=seed,
        dt=s.dt,
        n_agents=s.n_agents,
        status=status,
        aborted_at=aborted,
        monitor_lhs=np.array(mon_l, dtype=float),
        monitor_rhs=np.array(mon_r, dtype=float),
    )


@dataclass
class BatchSummary:
    seeds: list[int]
    records: list[RunRecord]
    n_agents: int
    dt: float

    @property
    def runs(self) -> int:
        return len(self.records)

    @property
    def min_h(self) -> np.ndarray:
        return np.array([r.min_h for r in self.records])

    @property
    def safe_count(self) -> int:
        return int(sum(r.safe for r in self.records))

    @property
    def reached(self) -> np.ndarray:
        return np.array([r.reached_at is not None for r in self.records], dtype=bool)

    @property
    def aborted(self) -> np.ndarray:
        return np.array([r.aborted for r in self.records], dtype=bool)

    @property
    def deviations(self) -> np.ndarray:
        return np.array([r.deviation for r in self.records])

    def solve_time_stats(self) -> tuple[float, float]:
        if not self.records:
            return math.nan, math.nan
        t = np.concatenate([r.solve_times for r in self.records])
        return (float(np.mean(t)), float(np.std(t))) if t.size else (math.nan, math.nan)

    def envelope(self):
        """Per-step componentwise min and max of the visited states across runs.

        Returns ``(count, lo, hi)``; step ``t`` pools the runs that are still
        running at ``t`` (their final state counts as visited).
        """
        n = 2 * self.n_agents
        if not self.records:
            return np.zeros(0, dtype=int), np.zeros((0, n)), np.zeros((0, n))
        T = max(r.states.shape[0] for r in self.records)
        stack = np.full((len(self.records), T, n), np.nan)
        for k, r in enumerate(self.records):
            S = r.states
            stack[k, :S.shape[0]] = S
        count = np.sum(~np.isnan(stack[:, :, 0]), axis=0)
        return count, np.nanmin(stack, axis=0), np.nanmax(stack, axis=0)

    def summary(self, include_timing: bool = False) -> dict:
        out = {
            "runs": self.runs,
            "seeds": list(self.seeds),
            "safe_runs": self.safe_count,
            "reached_runs": int(self.reached.sum()),
            "aborted_runs": int(self.aborted.sum()),
            "min_h_per_run": [float(v) for v in self.min_h],
            "reached_per_run": [bool(v) for v in self.reached],
            "control_deviation_total": float(self.deviations.sum()),
        }
        if include_timing:
            mean, std = self.solve_time_stats()
            out["solve_time_mean_s"] = None if math.isnan(mean) else mean
            out["solve_time_std_s"] = None if math.isnan(std) else std
        return out


def _episode_job(args):
    s, seed, opts = args
    return run_episode(s, seed, opts)


def run_monte_carlo(s: Scenario, runs: int, options: EpisodeOptions | None = None,
                    workers: int = 1, base_seed: int | None = None) -> BatchSummary:
    """``runs`` independent episodes with seeds ``seed, seed+1, ...``."""
    if runs < 0:
        raise ValueError(f"runs must be non-negative, got {runs}")
    base = s.seed if base_seed is None else int(base_seed)
    seeds = [base + r for r in range(runs)]
    jobs = [(s, sd, options) for sd in seeds]
    if workers > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_episode_job, jobs))
    else:
        records = [_episode_job(j) for j in jobs]
    return BatchSummary(seeds, records, s.n_agents, s.dt)


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow(row)


def _position_columns(n_agents: int, prefix: str = "") -> list[str]:
    cols = []
    for i in range(n_agents):
        cols += [f"{prefix}p_x_{i}", f"{prefix}p_y_{i}"]
    return cols


def export_record(rec: RunRecord, out_dir, include_timing: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    states = rec.states
    times = [k * rec.dt for k in range(states.shape[0])]
    paths = [out / "trajectory.csv", out / "controls.csv", out / "cbf.csv", out / "summary.json"]
    _write_csv(paths[0], ["t"] + _position_columns(rec.n_agents),
               ([_fmt(t)] + [_fmt(v) for v in x] for t, x in zip(times, states)))
    nom = np.linalg.norm(rec.nominal_controls, axis=1)
    fil = np.linalg.norm(rec.controls, axis=1)
    _write_csv(paths[1], ["t", "u_nominal_norm", "u_filtered_norm"],
               ([_fmt(times[k]), _fmt(nom[k]), _fmt(fil[k])] for k in range(rec.steps)))
    _write_csv(paths[2], ["t", "h_exact", "h_smooth"],
               ([_fmt(times[k]), _fmt(rec.h_exact[k]), _fmt(rec.h_smooth[k])]
                for k in range(rec.steps)))
    paths[3].write_text(json.dumps(rec.summary(include_timing), indent=2, sort_keys=True) + "\n")
    return paths


def export_batch(batch: BatchSummary, out_dir, include_timing: bool = False,
                 per_run: bool = False) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    count, lo, hi = batch.envelope()
    env = out / "envelope.csv"
    header = (["t", "runs"] + _position_columns(batch.n_agents, "min_")
              + _position_columns(batch.n_agents, "max_"))
    _write_csv(env, header,
               ([_fmt(k * batch.dt), str(int(count[k]))] + [_fmt(v) for v in lo[k]]
                + [_fmt(v) for v in hi[k]] for k in range(count.size)))
    runs_csv = out / "runs.csv"
    _write_csv(runs_csv, ["seed", "status", "steps", "reached_at", "min_h_exact",
                          "control_deviation"],
               ([str(r.seed), r.status, str(r.steps),
                 "" if r.reached_at is None else str(r.reached_at), _fmt(r.min_h),
                 _fmt(r.deviation)] for r in batch.records))
    summ = out / "summary.json"
    summ.write_text(json.dumps(batch.summary(include_timing), indent=2, sort_keys=True) + "\n")
    paths = [env, runs_csv, summ]
    if per_run:
        for r in batch.records:
            paths += export_record(r, out / f"run_{r.seed}", include_timing)
    return paths


def export(obj, out_dir, include_timing: bool = False) -> list[Path]:
    """Write a :class:`RunRecord` or :class:`BatchSummary` to ``out_dir``."""
    if isinstance(obj, RunRecord):
        return export_record(obj, out_dir, include_timing)
    if isinstance(obj, BatchSummary):
        if obj.runs == 1:
            paths = export_batch(obj, out_dir, include_timing)
            return paths + export_record(obj.records[0], os.path.join(out_dir, "run"),
                                         include_timing)
        return export_batch(obj, out_dir, include_timing, per_run=False)
    raise TypeError(f"cannot export {type(obj).__name__}")
