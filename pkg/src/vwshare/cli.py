"""Command line entry point: ``vwshare run`` and ``vwshare validate-config``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, SimConfig, load_config, validate_config
from .engine import Simulation
from .scenarios import run_scenario, scenario, write_outputs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vwshare", description="Virtual-world content sharing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment sweep and write CSV results")
    p.add_argument("--scenario", choices=("overhead", "delay", "load", "custom"), default="custom")
    p.add_argument("--config", type=Path, help="JSON file with SimConfig fields")
    p.add_argument("--objects", type=int, help="restrict the sweep to this object count")
    p.add_argument("--cycles", type=int)
    p.add_argument("--seed", type=int, help="base seed (default: config seed)")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--dynamics", choices=("on", "off"))
    p.add_argument("--strategy", choices=("improved", "proximity", "basic", "distance_sorted"))
    p.add_argument("--out", type=Path, default=Path("results.csv"))
    p.add_argument("--full", action="store_true", help="long load scenario: 100000 cycles in 1000-cycle windows")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--trace", type=Path, help="write a line-delimited event trace (custom scenario, one run)")

    v = sub.add_parser("validate-config", help="echo the resolved config and list violations")
    v.add_argument("path", type=Path)
    return parser


def _base_config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    if args.cycles is not None:
        cfg = replace(cfg, cycles=args.cycles)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.objects is not None:
        cfg = replace(cfg, objects=args.objects)
    if args.dynamics is not None:
        cfg = replace(cfg, dynamics=args.dynamics == "on")
    if args.strategy is not None:
        cfg = replace(cfg, strategy=args.strategy)
    return cfg.validate()


def cmd_run(args) -> int:
    base = _base_config(args)
    dynamics = None if args.dynamics is None else args.dynamics == "on"
    scn = scenario(args.scenario, base, full=args.full, objects=args.objects, dynamics=dynamics,
                   strategy=args.strategy)
    if scn.cycles is None and args.cycles is None and args.scenario != "custom":
        scn = replace(scn, cycles=base.cycles)
    if args.cycles is not None:
        scn = replace(scn, cycles=args.cycles)
    if args.trace:
        sim = Simulation(base, trace=True)
        sim.run()
        args.trace.write_text("".join(r.to_json() + "\n" for r in sim.world.trace))
    rows = run_scenario(scn, base, reps=args.reps, seed=base.seed, jobs=args.jobs)
    raw, summary = write_outputs(rows, args.out)
    print(f"wrote {len(rows)} rows to {raw} and summary to {summary}")
    return 0


def cmd_validate(args) -> int:
    report = validate_config(args.path)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 1 if report["violations"] else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_validate(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
