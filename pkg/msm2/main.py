import argparse
import logging
import sys
from typing import List, Optional

import structlog
from pydantic import ValidationError

from . import __version__
from .commands import estimate, markov_test, occupancy, paths, predict, simulate
from .config import Settings, get_settings
from .errors import ConfigurationError, Msm2Error

COMMANDS = (simulate, estimate, predict, markov_test, paths, occupancy)

logger = structlog.get_logger()


def configure_logging(settings: Settings) -> None:
    """
    Structured logging to stderr; outputs on disk and stdout stay clean
    """
    logging.basicConfig(
        stream=sys.stderr,
        format="%(message)s",
        level=getattr(logging, settings.log_level),
        force=True,
    )
    renderer = (
        structlog.dev.ConsoleRenderer()
        if settings.log_format == "console"
        else structlog.processors.JSONRenderer()
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msm2",
        description="Second-order multistate models: estimation, prediction, Markov tests and simulation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="override MSM2_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command.NAME, help=command.HELP)
        command.add_arguments(sub)
        sub.set_defaults(handler=command.run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse uses 2 for usage errors; flags are configuration
        return 0 if e.code == 0 else ConfigurationError.exit_code

    try:
        settings = get_settings()
        if args.log_level:
            settings = Settings(**{**settings.model_dump(), "log_level": args.log_level})
    except ValidationError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return ConfigurationError.exit_code
    configure_logging(settings)

    try:
        return args.handler(args, settings)
    except Msm2Error as e:
        logger.error(
            "Command failed",
            command=args.command,
            error=e.message,
            error_type=type(e).__name__,
            **{k: str(v) for k, v in e.context.items()},
        )
        return e.exit_code
    except ValidationError as e:
        logger.error("Invalid data", command=args.command, error=str(e), error_type="ValidationError")
        return 1
    except Exception as e:
        logger.error("Unhandled exception", command=args.command, error=str(e), exc_info=True)
        raise


if __name__ == "__main__":
    sys.exit(main())
