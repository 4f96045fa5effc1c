"""
TriFuse - Command-line entry point
"""
import argparse
from typing import List, Optional

from loguru import logger

from trifuse.commands import ablate, enhance, evaluate, fit_niqe, synth, train
from trifuse.core.config import settings
from trifuse.core.exceptions import USAGE_ERRORS
from trifuse.core.logging import setup_logging

COMMANDS = (synth, train, enhance, evaluate, ablate, fit_niqe)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trifuse",
        description=f"{settings.APP_NAME} {settings.APP_VERSION}: wavelet-domain diffusion for low-light enhancement",
    )
    parser.add_argument("--log-level", default=None, help=f"Log level (default: {settings.LOG_LEVEL})")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    # Include commands
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand

    Returns:
        0 on success, 2 on usage or configuration errors, 1 on internal errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level or settings.LOG_LEVEL)
    try:
        return args.handler(args)
    except USAGE_ERRORS as e:
        logger.error(f"❌ {e}")
        return 2
    except Exception as e:
        logger.opt(exception=settings.DEBUG).error(f"❌ Internal error in {args.command}: {e}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
