"""Command-line entry point: ``cts-lab <kind> --config <path>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import CtsLabError, ExperimentConfigError
from .env import bootstrap_env, configure_logging
from .experiments import ExperimentKind, ExperimentOutcome, load_config, run_experiment
from .report import dumps_json, error_document, result_document, write_csv, write_json

_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_COMPUTATION_ERROR = 1
EXIT_INVALID_CONFIG = 2


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ExperimentConfigError(message, code="invalid_arguments")


def _build_arg_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="cts-lab",
        description="Coordinated Transaction Scheduling market laboratory",
    )
    parser.add_argument(
        "kind",
        choices=[kind.value for kind in ExperimentKind],
        help="Experiment to run.",
    )
    parser.add_argument(
        "--config",
        required=True,
        metavar="PATH",
        help="TOML or JSON experiment configuration.",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Top-level seed; overrides the config value.",
    )
    parser.add_argument(
        "--out",
        default="results",
        metavar="DIR",
        help="Directory for result.json and CSV artifacts (default: results).",
    )
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Dotted config override, e.g. learning.rounds=500. Repeatable.",
    )
    return parser


def write_outcome(outcome: ExperimentOutcome, out_dir: Path) -> list[Path]:
    """Write every artifact of ``outcome`` under ``out_dir``; files are overwritten."""
    document = result_document(
        outcome.kind.value,
        outcome.config.model_dump(mode="json"),
        outcome.result,
    )
    written = [write_json(out_dir / "result.json", document)]
    if outcome.rounds is not None:
        written.append(write_csv(out_dir / "rounds.csv", outcome.rounds))
    for which, frame in sorted(outcome.series.items()):
        written.append(write_csv(out_dir / f"series_{which}.csv", frame))
    return written


def run_cli(argv: list[str] | None = None) -> int:
    bootstrap_env(override=False)
    configure_logging()
    try:
        parsed = _build_arg_parser().parse_args(argv)
        config = load_config(parsed.config, kind=parsed.kind, seed=parsed.seed, overrides=parsed.override)
        outcome = run_experiment(config)
        written = write_outcome(outcome, Path(parsed.out))
    except ExperimentConfigError as exc:
        _logger.error("invalid configuration (%s): %s", exc.code, exc)
        sys.stdout.write(dumps_json(error_document(exc.code, str(exc))))
        return EXIT_INVALID_CONFIG
    except CtsLabError as exc:
        _logger.error("experiment failed (%s): %s", exc.code, exc)
        sys.stdout.write(dumps_json(error_document(exc.code, str(exc))))
        return EXIT_COMPUTATION_ERROR

    for path in written:
        _logger.info("wrote %s", path)
    return EXIT_OK


def main() -> None:
    raise SystemExit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
