# asl/cli/main.py
import argparse
import sys
from typing import List, Optional

from pydantic import ValidationError

from asl import __version__
from asl.cli.commands import HANDLERS, run_validate
from asl.core.config import settings
from asl.core.errors import ASLError
from asl.core.logging import logger
from asl.schemas.reports import Command, RunManifest, utcnow
from asl.services.scenario import ScenarioError, build_scenario, load_config
from asl.services.storage import OutputStore
from asl.services.validation import AssumptionViolation

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

MANIFEST = "manifest.json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asl-sim", description="Adaptive social learning experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{validate,simulate,sweep,normality,drift,lemma}")
    sub.required = True
    helps = {
        "validate": "check the modelling assumptions and print the KL table and Perron vector",
        "simulate": "steady-state Monte Carlo runs",
        "sweep": "steady-state snapshots across a step-size grid",
        "normality": "Gaussian diagnostics at decreasing step-sizes",
        "drift": "adaptive against classic learning under a changing truth",
        "lemma": "checks on the weighted random series",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", required=name != "validate", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario's master seed")
        p.add_argument("--workers", type=int, default=settings.DEFAULT_WORKERS, help="worker processes")
    return parser


def write_manifest(store: OutputStore, manifest: RunManifest):
    manifest.files = sorted(set(store.written) | {MANIFEST})
    store.save_json(MANIFEST, manifest.model_dump(mode="json"))


def dispatch(command: Command) -> int:
    """Run one command; returns the process exit status."""
    try:
        config = load_config(command.scenario)
        scenario = build_scenario(config)
    except (ASLError, ValidationError) as e:
        # disconnected graphs and malformed likelihoods are scenario defects too
        logger.error(f"Invalid scenario {command.scenario}: {e}")
        return EXIT_VALIDATION
    except Exception as e:
        logger.error(f"Could not build scenario {command.scenario}: {e}")
        return EXIT_RUNTIME
    if command.seed is not None:
        scenario = scenario.with_overrides(seed=command.seed)

    if command.name == "validate":
        try:
            report = run_validate(scenario, command)
        except Exception as e:
            logger.error(f"Validation of {command.scenario} failed: {e}")
            return EXIT_RUNTIME
        return EXIT_OK if report.passed else EXIT_VALIDATION

    try:
        store = OutputStore(command.out, config.scenario_hash(), scenario.seed)
    except ValueError as e:
        logger.error(str(e))
        return EXIT_RUNTIME
    manifest = RunManifest(scenario_hash=store.scenario_hash, seed=scenario.seed, command=command.name)
    write_manifest(store, manifest)

    logger.info(f"Running '{command.name}' on scenario '{scenario.name}' (seed {scenario.seed})")
    try:
        HANDLERS[command.name](scenario, command, store)
    except Exception as e:
        status = EXIT_VALIDATION if isinstance(e, (AssumptionViolation, ScenarioError, ValidationError)) else EXIT_RUNTIME
        logger.error(f"'{command.name}' failed: {e}")
        removed = store.discard()
        logger.info(f"Removed partial outputs: {removed}")
        manifest.status, manifest.finished_at = "failed", utcnow()
        write_manifest(store, manifest)
        return status

    manifest.status, manifest.finished_at = "complete", utcnow()
    write_manifest(store, manifest)
    logger.info(f"'{command.name}' complete: {manifest.files}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors, 0 on --help/--version
        return int(e.code or 0)
    try:
        command = Command(name=args.command, scenario=args.scenario, out=args.out, seed=args.seed,
                          workers=args.workers)
    except ValidationError as e:
        logger.error(f"Invalid command line: {e}")
        return EXIT_VALIDATION
    return dispatch(command)


if __name__ == "__main__":
    sys.exit(main())
