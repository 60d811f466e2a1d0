"""bad-apple: command-line entry point.

    bad-apple run              one scenario, one report set per seed
    bad-apple sweep            every (policy, seed) cell, one combined table
    bad-apple validate-codecs  round-trip the golden wire fixtures

Exit status: 0 ok, 1 fixture mismatch, 2 invalid configuration, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import asyncio
import sys
from pathlib import Path
from typing import Optional

import structlog

from src.analysis.defenses import compare_defenses, compare_defenses_parallel
from src.analysis.metrics import score_run
from src.analysis.reports import build_report, write_reports
from src.shell.config import PROJECT_ROOT, ConfigInvalid, ScenarioConfig, load_config
from src.shell.contract import IoFailure, PolicyKind
from src.simulation.runner import run_scenario
from src.utils.logging import setup_logging
from src.wire.fixtures import fixture_paths, load_fixture, validate_fixture

log = structlog.get_logger()

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_IO = 3

DEFAULT_FIXTURES = PROJECT_ROOT / "tests" / "fixtures" / "codecs"


def _load(args: argparse.Namespace, policy: Optional[str] = None) -> ScenarioConfig:
    overrides = list(args.override or [])
    if policy:
        overrides.append(f"tor.policy={policy}")
    config = load_config(args.config, overrides)
    if args.out:
        config = config.with_changes(report_dir=str(args.out))
    setup_logging(config.log_level)
    return config


def cmd_run(args: argparse.Namespace) -> int:
    config = _load(args, args.policy)
    seeds = [args.seed] if args.seed is not None else list(config.seeds)
    out = Path(config.report_dir)
    for seed in seeds:
        output = run_scenario(config, seed)
        metrics = score_run(output.observations, output.trace_log, output.truth)
        paths = write_reports(build_report(output, config, metrics), out, config.name, seed)
        print(f"{output.summary()}\n  {metrics.summary()}\n  {len(paths)} report files in {out}")
    log.info("cli.run_complete", name=config.name, seeds=seeds, out=str(out))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load(args)
    seeds = list(args.seed) if args.seed else list(config.seeds)
    policies = list(args.policy) if args.policy else [p.value for p in PolicyKind]
    if args.workers and args.workers > 1:
        means, cells = asyncio.run(compare_defenses_parallel(config, policies, seeds, args.workers))
    else:
        means, cells = compare_defenses(config, policies, seeds)
    out = Path(config.report_dir)
    write_reports({"defenses": means, "defense_cells": cells}, out, config.name, "sweep")
    print(means.to_string(index=False))
    log.info("cli.sweep_complete", name=config.name, policies=policies, seeds=seeds, out=str(out))
    return EXIT_OK


def cmd_validate_codecs(args: argparse.Namespace) -> int:
    setup_logging()
    directory = Path(args.fixtures) if args.fixtures else DEFAULT_FIXTURES
    if not directory.is_dir():
        raise IoFailure(f"fixture directory not found: {directory}")
    paths = fixture_paths(directory)
    if not paths:
        log.warning("cli.no_fixtures", directory=str(directory))
        print(f"0 fixtures in {directory}: nothing to validate")
        return EXIT_OK
    failed = 0
    for path in paths:
        try:
            result = validate_fixture(load_fixture(path))
        except OSError as e:
            raise IoFailure(f"cannot read fixture {path}: {e}") from e
        except ValueError as e:
            print(f"FAIL {path.stem}: {e}")
            failed += 1
            continue
        if result.ok:
            print(f"PASS {result.name}")
        else:
            print(f"FAIL {result.name}: {result.reason}")
            failed += 1
    print(f"{len(paths) - failed}/{len(paths)} fixtures passed")
    return EXIT_MISMATCH if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bad-apple", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="scenario TOML (default: bundled)")
        p.add_argument("--out", type=Path, default=None, help="report directory")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="dotted config key, value read as TOML (repeatable)")

    run_p = sub.add_parser("run", help="run one scenario and write its reports")
    scenario_flags(run_p)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--policy", choices=[p.value for p in PolicyKind], default=None)
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="compare circuit policies over seeds")
    scenario_flags(sweep_p)
    sweep_p.add_argument("--seed", type=int, action="append")
    sweep_p.add_argument("--policy", choices=[p.value for p in PolicyKind], action="append")
    sweep_p.add_argument("--workers", type=int, default=1)
    sweep_p.set_defaults(func=cmd_sweep)

    codec_p = sub.add_parser("validate-codecs", help="round-trip golden wire fixtures")
    codec_p.add_argument("--fixtures", type=Path, default=None)
    codec_p.set_defaults(func=cmd_validate_codecs)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except IoFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


def run() -> None:
    """Entry point for pyproject.toml script."""
    sys.exit(main())


if __name__ == "__main__":
    run()
