"""Command-line entry point.

    opfbench run <config-path|builtin-name> [--seeds N] [--base-seed S]
                 [--out DIR] [--workers W]
    opfbench sweep <config-path|builtin-name> --param gamma --values 0.7,0.8,1.0
                 [--seeds N] [--base-seed S] [--out DIR] [--workers W]
    opfbench list

Exit status 0 on success; on failure a single machine-readable line
`error: {json}` goes to stderr and the status is nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig
from .errors import ConfigError
from .harness import builtin_experiments, get_config, run_experiment, sweep


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    overrides = {}
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    if args.base_seed is not None:
        overrides["base_seed"] = args.base_seed
    return config.with_options(**overrides) if overrides else config


def _out_dir(config: ExperimentConfig, args) -> Path:
    if args.out is not None:
        return Path(args.out)
    if config.out is not None:
        return Path(config.out)
    return Path("runs") / config.name


def _parse_values(raw: str, parameter: str) -> list:
    values = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if parameter == "gamma" and tok == "auto":
            values.append("auto")
        else:
            try:
                values.append(float(tok))
            except ValueError as exc:
                raise ConfigError(f"cannot parse sweep value {tok!r}") from exc
    return values


def _report(result, out_dir: Path) -> None:
    failed = [r for r in result.results if not r.ok]
    print(f"{result.config.name}: {len(result.results)} runs, "
          f"{len(result.results) - len(failed)} ok, {len(failed)} failed "
          f"-> {out_dir}")
    for r in failed:
        print(f"  FAILED seed={r.seed} method={r.label}: {r.error}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="opfbench",
        description="Online prediction benchmarks for linear stochastic systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("experiment", help="config file path or builtin name")
    p_run.add_argument("--seeds", type=int, default=None)
    p_run.add_argument("--base-seed", type=int, default=None)
    p_run.add_argument("--out", type=str, default=None)
    p_run.add_argument("--workers", type=int, default=1)

    p_sweep = sub.add_parser("sweep", help="sweep one parameter over a config")
    p_sweep.add_argument("experiment", help="config file path or builtin name")
    p_sweep.add_argument("--param", required=True, choices=("gamma", "alpha", "beta"))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--seeds", type=int, default=None)
    p_sweep.add_argument("--base-seed", type=int, default=None)
    p_sweep.add_argument("--out", type=str, default=None)
    p_sweep.add_argument("--workers", type=int, default=1)

    sub.add_parser("list", help="list builtin experiment names")

    args = parser.parse_args(argv)
    try:
        if args.command == "list":
            for name in sorted(builtin_experiments()):
                print(name)
            return 0
        config = _apply_overrides(get_config(args.experiment), args)
        out_dir = _out_dir(config, args)
        if args.command == "run":
            result = run_experiment(config, out_dir=out_dir, workers=args.workers)
            _report(result, out_dir)
            if any(not r.ok for r in result.results):
                return 1
            return 0
        # sweep
        values = _parse_values(args.values, args.param)
        results = sweep(
            config, args.param, values, out_dir=out_dir, workers=args.workers
        )
        bad = 0
        for res in results:
            _report(res, res.out_dir if res.out_dir else out_dir)
            bad += sum(not r.ok for r in res.results)
        return 1 if bad else 0
    except Exception as exc:
        line = json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}, sort_keys=True
        )
        print(f"error: {line}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
