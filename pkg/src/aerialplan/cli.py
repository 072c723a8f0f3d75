"""Command-line front end.

    aerialplan all --scenario insertion_line --out runs/a
    aerialplan simulate --scenario my.json --out runs/a --seed-disturbance 4
    aerialplan compare runs/baseline runs/compensated

Exit codes: 0 success, 2 scenario or input error, 3 planning failure,
4 infeasible parametrization, 5 simulation divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import artifacts as art
from .exceptions import ScenarioError
from .pipeline import STAGES, RunConfig, StageFailure, compare_runs, run_pipeline
from .scenario import load_scenario

log = logging.getLogger("aerialplan")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aerialplan",
                                description="Aerial manipulator planning and compensation pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES + ("all",):
        sp = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage")
        sp.add_argument("--scenario", required=True,
                        help="scenario JSON file or shipped name (insertion_line, labyrinth)")
        sp.add_argument("--out", help="output directory (default: scenario output_dir)")
        sp.add_argument("--seed-planner", type=int)
        sp.add_argument("--seed-disturbance", type=int)
        sp.add_argument("--no-compensation", action="store_true",
                        help="skip compensation and evaluate the uncompensated baseline")
    cp = sub.add_parser("compare", help="compare the error traces of two runs")
    cp.add_argument("run_a", help="baseline run directory")
    cp.add_argument("run_b", help="candidate run directory")
    cp.add_argument("--out", help="write per-sample deltas (CSV) and summary (JSON) here")
    return p


def _compare(args) -> int:
    try:
        summary, deltas = compare_runs(Path(args.run_a), Path(args.run_b))
    except art.ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        art.write_csv(out / "deltas.csv", ["t", "d_translation_err", "d_rotation_err", "d_z_err"],
                      deltas)
        (out / "comparison.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "compare":
        return _compare(args)
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    cfg = RunConfig.from_scenario(sc, args.out, args.seed_planner, args.seed_disturbance,
                                  compensation=not args.no_compensation)
    stages = STAGES if args.command == "all" else (args.command,)
    if args.no_compensation and args.command == "compensate":
        print("error: --no-compensation conflicts with the compensate stage", file=sys.stderr)
        return 2
    try:
        report = run_pipeline(cfg, stages)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    ev = report.get("evaluate")
    if ev is not None:
        line = f"peak z error uncompensated {ev['uncompensated']['peak_z']:.4f} m"
        if "compensated" in ev:
            line += (f", compensated {ev['compensated']['peak_z']:.4f} m"
                     f" (ratio {ev['peak_z_ratio']:.3f})")
        print(line)
    print(f"artifacts in {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
