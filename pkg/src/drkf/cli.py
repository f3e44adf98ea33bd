"""Command line entry point: ``drkf run`` and ``drkf validate``."""

from __future__ import annotations

import argparse
import json
import sys

from .experiment import StageError, load_config, run_experiment, validate_config, write_outputs
from .scenario import ScenarioError


def _parser():
    ap = argparse.ArgumentParser(prog="drkf", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the analysis (and optional Monte Carlo) and write CSV")
    run.add_argument("--config", required=True, help="JSON scenario config")
    run.add_argument("--seed", type=int, help="master seed (overrides the config)")
    run.add_argument("--mc-runs", type=int, dest="mc_runs", help="Monte-Carlo runs (0 disables)")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("-q", "--quiet", action="store_true")
    val = sub.add_parser("validate", help="dry-run checks on a config")
    val.add_argument("--config", required=True)
    return ap


def _fail(stage, exc, t=None):
    where = stage if t is None else f"{stage} t={t}"
    print(f"drkf: error [{where}]: {exc}", file=sys.stderr)
    return 2


def main(argv=None):
    args = _parser().parse_args(argv)
    overrides = {}
    if args.command == "run":
        overrides = {"seed": args.seed, "mc_runs": args.mc_runs, "out": args.out}
    try:
        config = load_config(args.config, overrides)
    except (OSError, json.JSONDecodeError, TypeError, ScenarioError) as exc:
        return _fail("config", exc)

    if args.command == "validate":
        problems = validate_config(config)
        for msg in problems:
            print(f"drkf: error [validate]: {msg}", file=sys.stderr)
        if problems:
            return 1
        print("ok")
        return 0

    log = None if args.quiet else (lambda msg: print(f"drkf: {msg}", file=sys.stderr))
    try:
        result = run_experiment(config, progress=log)
    except StageError as exc:
        print(f"drkf: error {exc}", file=sys.stderr)
        return 2
    try:
        paths = write_outputs(result, config.out)
    except OSError as exc:
        return _fail("write", exc)
    for key, rep in result.convergence.items():
        if not rep["ok"]:
            print(f"drkf: warning: {key} not converged over the window "
                  f"(max increment {rep['max_increment']:.3e} >= {rep['tol']:.0e}); "
                  "consider a larger T", file=sys.stderr)
    if log:
        for p in paths.values():
            log(f"wrote {p}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
