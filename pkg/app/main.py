"""FourierSR Lab command-line entry point"""
import os

# timings and reductions assume one BLAS/FFT worker
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import logging
import sys
from typing import List, Optional

from app.api import bench, complexity, erf, train, verify
from app.core.config import settings
from app.core.errors import FourierSRError
from app.core.logging import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsr",
        description=f"{settings.APP_NAME} v{settings.APP_VERSION}: FourierSR token mixing, verified and measured",
    )
    parser.add_argument("--log-level", default=None, help="override FSR_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    # Include commands
    verify.register(subparsers)
    complexity.register(subparsers)
    bench.register(subparsers)
    train.register(subparsers)
    erf.register(subparsers)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse `argv`, run one subcommand and return its exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    configure_logging(args.log_level)
    logger.debug(f"Starting {settings.APP_NAME} v{settings.APP_VERSION}: {args.command}")
    try:
        return args.handler(args)
    except FourierSRError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
