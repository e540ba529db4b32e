"""Command-line front end: ``crpnav {design,validate,knowledge,dispersion}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from crpnav import config as cfgmod
from crpnav import design
from crpnav import dispersion as dp
from crpnav import dynamics as dyn
from crpnav import knowledge as kn
from crpnav import measurements as ms

log = logging.getLogger("crpnav")

EXIT_OK = 0
EXIT_VIOLATION = 2
EXIT_NUMERICAL = 3
EXIT_CONFIG = 4

NUMERICAL_ERRORS = (dyn.DynamicsError, design.BvpError, kn.KnowledgeError, dp.DispersionError,
                    ms.MeasurementError, np.linalg.LinAlgError, FloatingPointError)

SCHEMA = {
    "trajectory.csv": {"columns": design.TRAJECTORY_COLUMNS,
                       "units": "s, frame id, m, m/s, m, deg, arc index"},
    "measurements.csv": {"columns": ms.SCHEDULE_COLUMNS,
                         "units": "s, observable kind, value/sigma in m, m/s or rad, flags"},
    "knowledge.csv": {"columns": kn.KNOWLEDGE_COLUMNS,
                      "units": "s, RSS 1-sigma position m and velocity m/s, arc index, flags"},
    "dispersion.csv": {"columns": dp.DISPERSION_COLUMNS,
                       "units": "s, RSS 1-sigma m, percent of nominal min body range, m, count, flag"},
    "nav_cost.csv": {"columns": ["seed", "nav_cost"], "units": "sample seed, m/s"},
    "nav_cost_cdf.csv": {"columns": ["nav_cost", "probability"], "units": "m/s, [0, 1]"},
}


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if hasattr(x, "value"):
        return x.value
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _echo(scn, out, command):
    echo = {"command": command, "config": scn.raw, "resolved": {
        "option": scn.option,
        "system": asdict(scn.system), "spacecraft": asdict(scn.spacecraft),
        "budget": asdict(scn.budget), "navcam": asdict(scn.navcam),
        "isl": {k: v for k, v in asdict(scn.isl).items()},
        "P_K0_sigma": np.sqrt(np.diag(scn.P_K0)).tolist(),
        "estimate_biases": scn.estimate_biases, "cadence": scn.cadence, "schedule": scn.schedule,
        "dispersion": {k: v for k, v in asdict(scn.dispersion).items() if k != "opts"},
    }}
    with open(out / "config_echo.yaml", "w") as fh:
        yaml.safe_dump(json.loads(json.dumps(echo, default=_jsonable)), fh, sort_keys=True)
    _dump_json(SCHEMA, out / "schema.json")


def _plan(scn):
    return design.plan_from_layout(scn.plan_layout(), scn.system, scn.spacecraft)


def _schedule(scn, plan):
    if scn.schedule == "empty":
        log.warning("empty measurement schedule: knowledge only grows")
        return ms.empty_schedule(plan)
    if plan.option_label.upper() in ms.POLICIES:
        return ms.build_schedule(plan)
    return ms.build_schedule(plan, policy=ms.POLICIES["B"])


def _knowledge(scn, plan, schedule):
    return kn.run_knowledge(plan, schedule, scn.system, scn.spacecraft, scn.budget, scn.P_K0,
                            scn.navcam, scn.isl, scn.estimate_biases, scn.cadence)


def _write_trajectory(plan, scn, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(design.TRAJECTORY_COLUMNS)
        for row in design.trajectory_rows(plan, scn.system, scn.spacecraft):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def cmd_design(scn, out, args=None):
    plan = _plan(scn)
    design.write_plan(plan, out / "plan.json")
    _write_trajectory(plan, scn, out / "trajectory.csv")
    return _report(plan, scn, out)


def _report(plan, scn, out):
    report = design.validate_plan(plan, scn.system, scn.spacecraft)
    _dump_json(report.to_dict(), out / "constraints.json")
    for v in report.violations:
        log.error("violation: %s", v.message)
    for w in report.warnings:
        log.warning("warning: %s", w.message)
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_validate(scn, out, args=None):
    if args is not None and args.plan:
        with open(args.plan) as fh:
            plan = design.plan_from_dict(json.load(fh))
    else:
        plan = _plan(scn)
    return _report(plan, scn, out)


def cmd_knowledge(scn, out, args=None):
    plan = _plan(scn)
    schedule = _schedule(scn, plan)
    tl = _knowledge(scn, plan, schedule)
    ms.write_measurements_csv(schedule.stubs, out / "measurements.csv")
    kn.write_knowledge_csv(tl, out / "knowledge.csv")
    _dump_json(tl.summary(), out / "knowledge_summary.json")
    return EXIT_OK


def cmd_dispersion(scn, out, args=None):
    plan = _plan(scn)
    tl = _knowledge(scn, plan, _schedule(scn, plan))
    ref = dp.prepare(plan, tl, scn.system, scn.spacecraft, scn.budget, scn.dispersion, scn.P_D0)
    workers = args.workers if args is not None and args.workers else dp.default_workers()
    n = scn.dispersion.n_samples
    if n < 2:
        runs = [dp.simulate_sample(ref, s) for s in dp._sample_seeds(scn.dispersion.seed, n)]
        res = dp.DispersionResult(n, np.array([]), np.array([]), np.array([]), np.array([]), np.array([]),
                                  np.array([]), np.array([r.nav_cost for r in runs]),
                                  float(any(r.termination and r.termination.kind == "collision" for r in runs)),
                                  float(any(r.termination and r.termination.kind == "escape" for r in runs)),
                                  False, plan.end_epoch, [(r.seed, r.termination) for r in runs if r.termination],
                                  [r.seed for r in runs], dp.config_echo(ref, scn.dispersion.seed, n))
    else:
        res = dp.run_dispersion(ref, workers=workers)
    kn.write_knowledge_csv(tl, out / "knowledge.csv")
    dp.write_dispersion_csv(res, out / "dispersion.csv")
    dp.write_nav_cost_csv(res, out / "nav_cost.csv")
    with open(out / "nav_cost_cdf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["nav_cost", "probability"])
        for c, p in dp.nav_cost_cdf(res):
            w.writerow([repr(c), repr(p)])
    dp.write_summary(res, out / "dispersion_summary.json")
    if res.stopped_early:
        log.warning("collision fraction %.3f exceeded the threshold; run stopped at t=%.0f s",
                    res.collision_fraction, res.stop_epoch)
    return EXIT_OK


COMMANDS = {"design": cmd_design, "validate": cmd_validate, "knowledge": cmd_knowledge,
            "dispersion": cmd_dispersion}


def build_parser():
    parser = argparse.ArgumentParser(prog="crpnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="scenario YAML file")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--option", choices=["A", "B", "custom"], help="reference plan")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--samples", type=int, help="Monte Carlo sample count")
        p.add_argument("--workers", type=int, help="parallel workers (default: all cores)")
        p.add_argument("--verbose", "-v", action="store_true")
        if name == "validate":
            p.add_argument("--plan", type=Path, help="plan JSON written by the design command")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as stop:  # usage errors are config errors; --help stays 0
        return EXIT_CONFIG if stop.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        scn = cfgmod.load_scenario(args.config, option=args.option, seed=args.seed,
                                   samples=args.samples)
        if args.workers is not None and args.workers < 1:
            raise cfgmod.ConfigError("--workers must be positive")
        args.out.mkdir(parents=True, exist_ok=True)
        _echo(scn, args.out, args.command)
        return COMMANDS[args.command](scn, args.out, args)
    except cfgmod.ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_CONFIG
    except design.BvpError as err:
        log.error("numerical failure: %s", err)
        return EXIT_NUMERICAL
    except design.DesignError as err:
        log.error("constraint violation: %s", err)
        return EXIT_VIOLATION
    except NUMERICAL_ERRORS as err:
        log.error("numerical failure: %s", err)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
