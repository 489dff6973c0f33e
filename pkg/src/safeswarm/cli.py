"""Command-line entry point: ``run``, ``verify`` and ``validate``.

Exit codes: 0 all runs safe, 2 a safety violation occurred, 3 a QP was
infeasible (episode aborted), 1 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from .exceptions import ConfigurationError
from .harness import EpisodeOptions, export, run_monte_carlo
from .mission import bundled_scenario_path, load_scenario, scenario_from_dict, validate
from .verify import verify_report

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_UNSAFE = 2
EXIT_INFEASIBLE = 3

log = logging.getLogger("safeswarm")


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    try:
        return bundled_scenario_path(path)
    except ConfigurationError:
        raise ConfigurationError(f"scenario file not found: {path}") from None


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safeswarm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run episodes of a scenario")
    run.add_argument("--scenario", required=True,
                     help="scenario file, or a bundled name (single_obstacle, multi_obstacle)")
    run.add_argument("--beta", type=float)
    run.add_argument("--scheme", choices=["poly", "lse"])
    run.add_argument("--k", type=int, help="smoothness order of the transition polynomial")
    run.add_argument("--runs", type=int, default=1)
    run.add_argument("--seed", type=int)
    run.add_argument("--horizon", type=int)
    run.add_argument("--out", default="out")
    run.add_argument("--paper-literal-sign", action="store_true",
                     help="use the goal-repelling sign of the proportional term")
    run.add_argument("--no-noise", action="store_true", help="zero disturbance realizations")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--timing", action="store_true", help="include solve times in summary.json")

    ver = sub.add_parser("verify", help="run the numerical oracles and write verify_report.json")
    ver.add_argument("--out", default=".")
    ver.add_argument("--scenario", default="multi_obstacle")
    ver.add_argument("--pairs", type=int, default=10_000)
    ver.add_argument("--states", type=int, default=200)
    ver.add_argument("--seed", type=int, default=0)

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("--scenario", required=True)
    return ap


def _cmd_run(args) -> int:
    s = load_scenario(_resolve(args.scenario))
    changes = {k: v for k, v in (("beta", args.beta), ("scheme", args.scheme),
                                 ("k_smooth", args.k), ("seed", args.seed),
                                 ("horizon", args.horizon)) if v is not None}
    if changes:
        s = s.replace(**changes)
        problems = validate(s)
        if problems:
            raise ConfigurationError("; ".join(problems))
    if args.runs < 1:
        raise ConfigurationError("--runs must be >= 1")
    opts = EpisodeOptions(inject_noise=not args.no_noise,
                          paper_literal_sign=args.paper_literal_sign)
    log.info("running %d episode(s), seeds from %d", args.runs, s.seed)
    batch = run_monte_carlo(s, args.runs, opts, workers=args.workers)
    export(batch, args.out, include_timing=args.timing)
    print(json.dumps({"runs": batch.runs, "safe_runs": batch.safe_count,
                      "reached_runs": int(batch.reached.sum()),
                      "aborted_runs": int(batch.aborted.sum()), "out": str(args.out)}))
    if batch.safe_count < batch.runs:
        return EXIT_UNSAFE
    if batch.aborted.any():
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_verify(args) -> int:
    s = load_scenario(_resolve(args.scenario))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = verify_report(out / "verify_report.json", n_pairs=args.pairs,
                           n_states=args.states, seed=args.seed, scenario=s)
    bad = sum(r["violations"] for r in report["pair_error_bound"])
    bad += report.get("monitor", {}).get("violations", 0)
    print(json.dumps({"report": str(out / "verify_report.json"), "violations": bad}))
    return EXIT_OK if bad == 0 else EXIT_UNSAFE


def _cmd_validate(args) -> int:
    import yaml

    path = _resolve(args.scenario)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML: {exc}") from None
    problems = validate(scenario_from_dict(data))
    for p in problems:
        print(p)
    if not problems:
        print(f"{path}: ok")
    return EXIT_OK if not problems else EXIT_CONFIG


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    handler = {"run": _cmd_run, "verify": _cmd_verify, "validate": _cmd_validate}[args.command]
    try:
        return handler(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
