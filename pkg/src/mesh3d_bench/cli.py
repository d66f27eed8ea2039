"""mesh3d-bench command-line entry point."""

import argparse
import asyncio
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from . import __version__
from .command_definitions import SIGN_ALIASES, get_commands
from .command_handlers import CommandHandlers
from .config import ConfigurationError, get_config
from .errors import BenchError

logger = logging.getLogger(__name__)

EXIT_UNEXPECTED = 1
EXIT_INVALID = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mesh3d-bench",
        description="Mesh conversion, reconstruction and evaluation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command in get_commands():
        sub = subparsers.add_parser(command.name, help=command.description, description=command.description)
        for flags, options in command.arguments:
            sub.add_argument(*flags, **options)
    return parser


def job_arguments(namespace: argparse.Namespace) -> Dict[str, Any]:
    """Parsed flags as job-model fields; unset flags fall back to model defaults."""
    arguments = {
        k: v for k, v in vars(namespace).items() if k not in ("command", "debug") and v is not None
    }
    if "sign" in arguments:
        arguments["sign"] = SIGN_ALIASES[arguments["sign"]]
    return arguments


def _report_error(error: str, message: str, details: Dict[str, Any]) -> None:
    payload = {"error": error, "message": message, "details": details}
    print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run one command and return the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        settings = get_config()
    except ConfigurationError as e:
        _report_error("ConfigurationError", str(e), {})
        return EXIT_INVALID

    if settings.debug_mode or args.debug:
        logging.getLogger("mesh3d_bench").setLevel(logging.DEBUG)
        logger.debug(f"settings: {settings.model_dump(mode='json')}")

    handlers = CommandHandlers(settings)
    try:
        result = asyncio.run(handlers.dispatch(args.command, job_arguments(args)))
    except BenchError as e:
        _report_error(type(e).__name__, str(e), e.details)
        return e.exit_code
    except ValidationError as e:
        _report_error(
            "ValidationError",
            f"invalid {args.command} configuration",
            {"errors": json.loads(e.json(include_url=False))},
        )
        return EXIT_INVALID
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}")
        _report_error(type(e).__name__, str(e), {})
        return EXIT_UNEXPECTED

    for output in result.outputs:
        print(output)
    for warning in result.warnings:
        logger.warning(f"{args.command}: {warning}")
    return result.exit_code


def main():
    """Main entry point."""
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    sys.exit(run())


if __name__ == "__main__":
    main()
