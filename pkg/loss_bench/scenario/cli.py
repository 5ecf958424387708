"""
Command line front end.

    loss-bench run nosub_equal_sizes --set k_obligors=[10] --output out/
    loss-bench validate my_scenario.json
    loss-bench list-scenarios
"""

import argparse
import json
import logging
import os
import pathlib
import sys
import warnings
from typing import List, Optional

from ..errors import (
    BudgetExceededError,
    ConvergenceError,
    DomainError,
    InconclusiveFitError,
    LossBenchError,
    MultipleRootsError,
    NoRootError,
    ScenarioError,
    SingularCovarianceError,
    UndefinedCorrelationError,
    UnsupportedDimensionError,
)
from ..tool import bundled_scenarios, load_scenario_document
from .models import resolve
from .runner import Runner, feasibility

logger = logging.getLogger(__name__)

WORKERS_ENV = "LOSS_BENCH_WORKERS"
EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

INVALID_INPUT = (
    ScenarioError,
    DomainError,
    UnsupportedDimensionError,
    SingularCovarianceError,
    BudgetExceededError,
    UndefinedCorrelationError,
)
NUMERIC_FAILURE = (ConvergenceError, NoRootError, MultipleRootsError, InconclusiveFitError)


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV)
    if value:
        try:
            return max(int(value), 1)
        except ValueError:
            logger.warning("ignoring %s=%r, not an integer", WORKERS_ENV, value)
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loss-bench",
        description="Loss distributions of credit portfolios under fluctuating asset correlations",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="repeat for debug output"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    p_run = subparsers.add_parser("run", help="run a scenario and write its artifacts")
    p_validate = subparsers.add_parser(
        "validate", help="check a scenario and estimate its cost without computing"
    )
    for p in (p_run, p_validate):
        p.add_argument("scenario", help="scenario file, directory or bundled scenario name")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="PATH=VALUE",
            help="override one scenario leaf by its dotted path; VALUE is parsed as JSON",
        )
        p.add_argument(
            "--workers",
            type=int,
            default=None,
            help=f"worker count (default: ${WORKERS_ENV} or all cores)",
        )
    p_run.add_argument("--output", type=pathlib.Path, default=None, help="output directory")

    subparsers.add_parser("list-scenarios", help="list the bundled scenarios")
    return parser


def _error_report(error: LossBenchError, code: int, artifacts=()) -> dict:
    report = {
        "error": type(error).__name__,
        "message": str(error).splitlines()[0] if str(error) else "",
        "exit_code": code,
    }
    if isinstance(error, ScenarioError):
        report["pointers"] = error.pointers
    if isinstance(error, ConvergenceError):
        report["estimate"] = error.estimate
        report["error_bound"] = error.error_bound
    if isinstance(error, NoRootError):
        report["target"] = error.target
        report["attainable"] = list(error.attainable)
    if isinstance(error, MultipleRootsError):
        report["roots"] = error.roots
    if artifacts:
        report["partial_artifacts"] = [str(a.path) for a in artifacts]
    return report


def _fail(error: LossBenchError, code: int, artifacts=()) -> int:
    print(json.dumps(_error_report(error, code, artifacts), default=str), file=sys.stderr)
    return code


def _resolve(args):
    document = load_scenario_document(args.scenario)
    return resolve(document, args.overrides)


def command_run(args) -> int:
    runner = None
    try:
        scenario = _resolve(args)
        runner = Runner(scenario, args.output, args.workers or default_workers())
        runner.run()
    except INVALID_INPUT as e:
        return _fail(e, EXIT_INVALID, runner.artifacts if runner else ())
    except NUMERIC_FAILURE as e:
        return _fail(e, EXIT_NUMERIC, runner.artifacts if runner else ())
    for artifact in runner.artifacts:
        print(artifact.summary_line())
    return EXIT_OK


def command_validate(args) -> int:
    try:
        scenario = _resolve(args)
        report = feasibility(scenario, args.workers or default_workers())
    except INVALID_INPUT as e:
        return _fail(e, EXIT_INVALID)
    print(json.dumps({"valid": True} | report, indent=2, sort_keys=True))
    return EXIT_OK


def command_list(args) -> int:
    for name, entry in bundled_scenarios().items():
        description = json.loads(entry.read_text()).get("description", "")
        print(f"{name:32s} {description}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)
    commands = {
        "run": command_run,
        "validate": command_validate,
        "list-scenarios": command_list,
    }
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
