"""Command-line entry point: ``pdeid <verb> --config FILE [--out DIR] [--seed N] [-j N]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .config import ConfigError, load_config, parse_config, set_dotted
from .experiments import (run_dimension_study, run_experiment, run_noise_estimate, run_sweep,
                          run_trim_comparison, trajectory_for)
from .solvers import StabilityError
from .trajectory import export_csv, save_trajectory

log = logging.getLogger("pdeid")


def _solve(raw, args) -> int:
    cfg = parse_config(raw)
    traj = trajectory_for(cfg.problem)
    out = Path(args.out or cfg.output or f"results/{cfg.name}")
    out.mkdir(parents=True, exist_ok=True)
    save_trajectory(traj, out / "trajectory.bin")
    if traj.grid.ndim == 1:
        export_csv(traj, out / "trajectory.csv")
    print(f"wrote {out / 'trajectory.bin'}")
    return 0


def _identify(raw, args) -> int:
    if raw.get("sweep"):
        reports = run_sweep(raw, args.out, jobs=args.jobs, seed=args.seed)
        for r in reports:
            print(f"{r.params}: mean Jaccard {r.aggregates['mean_jaccard']}")
        return 0 if all(r.all_completed for r in reports) else 1
    report = run_experiment(raw, args.out, jobs=args.jobs, seed=args.seed)
    agg = report.aggregates
    print(f"{report.name}: {agg['completed']}/{agg['trials']} trials, "
          f"mean Jaccard {agg['mean_jaccard']}, mean coefficient error "
          f"{agg['mean_coefficient_error']}")
    for row in report.rows:
        if row["status"] != "ok":
            print(f"  trial {row['trial']} failed in {row['stage']}: {row['error']}")
    return 0 if report.all_completed else 1


def _dimension(raw, args) -> int:
    summary = run_dimension_study(raw, args.out)
    for key, counts in summary.items():
        if key.startswith("_") or key.startswith("random_"):
            continue
        print(f"{key}: {counts}")
    return 0


def _trim(raw, args) -> int:
    table = run_trim_comparison(raw, args.out, jobs=args.jobs, seed=args.seed)
    names = list(table["with_trim"])
    print("variant      " + "  ".join(f"{n:>10}" for n in names))
    for variant in ("with_trim", "without_trim"):
        print(f"{variant:<12} " + "  ".join(
            f"{table[variant][n]:>10.3f}" if table[variant][n] is not None else f"{'n/a':>10}"
            for n in names))
    done = all(v is not None for row in table.values() for v in row.values())
    return 0 if done else 1


def _noise(raw, args) -> int:
    est = run_noise_estimate(raw, args.out, seed=args.seed)
    print(json.dumps(est, indent=2))
    return 0


VERBS = {
    "solve": _solve,
    "identify": _identify,
    "dimension-study": _dimension,
    "trim-compare": _trim,
    "noise-estimate": _noise,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdeid", description=__doc__.split("\n")[0])
    p.add_argument("verb", choices=sorted(VERBS))
    p.add_argument("--config", "-c", required=True, help="YAML experiment configuration")
    p.add_argument("--out", "-o", default=None, help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, default=None, help="override the base seed")
    p.add_argument("-j", "--jobs", type=int, default=1, help="parallel trials")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a dotted config key (value parsed as YAML)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = load_config(args.config)
        for item in args.set:
            key, _, value = item.partition("=")
            raw = set_dotted(raw, key, yaml.safe_load(value))
        if args.verb == "solve" and args.seed is not None:
            raw = set_dotted(raw, "seed", args.seed)
        return VERBS[args.verb](raw, args)
    except ConfigError as exc:
        print(f"configuration error in {exc.field}: {exc}", file=sys.stderr)
        return 2
    except (StabilityError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
