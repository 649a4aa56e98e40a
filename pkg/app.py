"""
Main Application Entry Point
----------------------------
This is the command-line entry point of the credit reset lab.
It runs configured experiments and writes summary reports.

Usage:
    python app.py run <config-file-or-dir> [--check] [--replicates N] [--seed S] [--out DIR]
    python app.py report <artifact-dir>
"""

import sys
import logging
import argparse
from typing import List, Optional

from config.experiment_config import apply_overrides, collect_config_paths, load_config
from config.settings import configure_logging
from experiments.runner import run_experiment
from models.errors import ConfigValidationError, CorruptArtifactError, LabError
from utils.report import emit_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUN_ERROR = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='app.py', description='Credit reset lab experiments')
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='Run one config file or every *.json in a directory')
    run.add_argument('config', help='Config file or directory of config files')
    run.add_argument('--check', action='store_true', help='Exit non-zero if an acceptance criterion fails')
    run.add_argument('--replicates', type=int, default=None, help='Override the replicate count')
    run.add_argument('--seed', type=int, default=None, help='Override the master seed')
    run.add_argument('--out', default=None, help='Artifact root; each experiment writes to <out>/<experiment>')

    rep = commands.add_parser('report', help='Write SUMMARY.md for an artifact directory')
    rep.add_argument('artifact_dir', help='Experiment directory or artifact root')
    return parser


def run_command(args: argparse.Namespace) -> int:
    configs = [apply_overrides(load_config(path), args.replicates, args.seed, args.out)
               for path in collect_config_paths(args.config)]
    failed = []
    for config in configs:
        result = run_experiment(config)
        if not result.passed:
            failed.append(config.experiment)
    if failed:
        logger.warning(f"Experiments with failing criteria: {', '.join(failed)}")
        if args.check:
            return EXIT_CHECK_FAILED
    return EXIT_OK


def report_command(args: argparse.Namespace) -> int:
    path = emit_report(args.artifact_dir)
    logger.info(f"Report written to {path}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main function to parse arguments and dispatch a command"""
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        if args.command == 'run':
            return run_command(args)
        return report_command(args)
    except ConfigValidationError as e:
        logger.error(f"Invalid configuration: {str(e)}")
        return EXIT_CONFIG_ERROR
    except CorruptArtifactError as e:
        logger.error(f"Corrupt artifacts: {str(e)}")
        return EXIT_RUN_ERROR
    except LabError as e:
        logger.error(f"Error running experiment: {str(e)}")
        return EXIT_RUN_ERROR


if __name__ == "__main__":
    sys.exit(main())
