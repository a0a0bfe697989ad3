"""Command-line entry point.

Usage::

    imgforge [options] <Pifile>

The pipeline logs to stdout, one line per event, prefixed with the active
stage and the originating Pifile line::

    [setup] begin
    [chroot] example.Pifile:8 RUN raspi-config nonint do_serial 0

Errors go to stderr with file:line context.  Exit codes partition the
outcomes: 0 success, 1 static Pifile/plan errors, 2 execution failures,
3 environment problems (missing privileges, unusable cache, no chroot).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .errors import (
    CommandFailed,
    EnvironmentProblem,
    ImgforgeError,
    PifileError,
)
from .executor import DryRunExecutor, Executor, LocalExecutor, RunOptions, execute
from .pifile import SourceLine, parse_pifile
from .plan import build_plan, validate_plan
from .source import TargetKind

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PIFILE = 1
EXIT_EXECUTION = 2
EXIT_ENVIRONMENT = 3


@dataclass
class CliConfig:
    pifile: Path
    dry_run: Path | None = None
    cache_dir: Path | None = None
    env_overrides: dict[str, str] = field(default_factory=dict)
    refresh: bool = False
    offline: bool = False
    inplace_device: bool = False
    emulators: list[str] | None = None
    verbosity: int = 0


def render_log(stage: str, message: str, *, pifile: str | None = None,
               line: int | None = None) -> str:
    """Format one pipeline event: ``[stage] Pifile:NN message``."""
    if pifile is not None and line is not None:
        return f"[{stage}] {pifile}:{line} {message}"
    return f"[{stage}] {message}"


def _build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imgforge",
        description="Apply a Pifile to a single-board-computer OS image.",
        epilog=(
            "Sizes use binary multipliers: PUMP 100M grows by 100 MiB. "
            "Exit codes: 0 ok, 1 Pifile/plan error, 2 execution failure, "
            "3 environment problem."
        ),
    )
    parser.add_argument("pifile", help="the Pifile to execute")
    parser.add_argument("--dry-run", metavar="FILE",
                        help="perform nothing; write the action log to FILE")
    parser.add_argument("--cache", metavar="DIR",
                        help="download cache directory (default: $PIMOD_CACHE or "
                             ".pimod-cache beside the Pifile)")
    parser.add_argument("--env", action="append", default=[], metavar="NAME=VALUE",
                        help="set a variable for Pifile substitution (repeatable)")
    parser.add_argument("--refresh", action="store_true",
                        help="re-download cached sources")
    parser.add_argument("--offline", action="store_true",
                        help="fail instead of downloading on a cache miss")
    parser.add_argument("--emulator", action="append", metavar="PATH",
                        help="static emulator binary to copy into the guest "
                             "(default: qemu-*-static found on PATH)")
    parser.add_argument("--inplace-device", action="store_true",
                        help="confirm that writing to a block device is intended")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="count", default=0)
    return parser


def _parse_env_overrides(pairs: Sequence[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep or not name:
            raise PifileError(f"--env expects NAME=VALUE, got {pair!r}")
        overrides[name] = value
    return overrides


def main(argv: Sequence[str] | None = None, env: Mapping[str, str] | None = None, *,
         executor_factory: Callable[[CliConfig], Executor] | None = None) -> int:
    """Parse, plan, execute; returns the process exit code.

    ``executor_factory`` overrides backend construction, which is how tests
    exercise failure paths without touching the system.
    """
    parser = _build_arg_parser()
    try:
        ns = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_PIFILE

    environment = dict(os.environ if env is None else env)
    backend: Executor | None = None
    config: CliConfig | None = None
    try:
        config = CliConfig(
            pifile=Path(ns.pifile),
            dry_run=Path(ns.dry_run) if ns.dry_run else None,
            cache_dir=Path(ns.cache) if ns.cache else None,
            env_overrides=_parse_env_overrides(ns.env),
            refresh=ns.refresh,
            offline=ns.offline,
            inplace_device=ns.inplace_device,
            emulators=ns.emulator,
            verbosity=ns.verbose - ns.quiet,
        )
        _configure_logging(config.verbosity)
        environment.update(config.env_overrides)

        pifile = parse_pifile(config.pifile, environment)
        plan = build_plan(pifile)
        for warning in validate_plan(plan):
            print(f"warning: {warning}", file=sys.stderr)

        writes_device = plan.destination.kind is TargetKind.BLOCK_DEVICE
        if writes_device and not config.inplace_device:
            raise PifileError(
                f"destination {plan.destination.path} is a block device; "
                "pass --inplace-device to confirm overwriting it"
            )

        if executor_factory is not None:
            backend = executor_factory(config)
        elif config.dry_run is not None:
            backend = DryRunExecutor()
        else:
            backend = LocalExecutor(on_output=lambda line: print(f"  {line}"))

        options = RunOptions(
            env=environment,
            cache_dir=config.cache_dir,
            refresh=config.refresh,
            offline=config.offline,
            emulators=config.emulators,
            on_log=_stdout_logger,
        )
        report = execute(plan, backend, options)
        if report.image_digest is not None:
            print(render_log("done", f"{plan.destination.path} sha256={report.image_digest}"))
        else:
            print(render_log("done", f"{report.action_count} actions"))
        return EXIT_OK
    except PifileError as exc:
        _report_error(exc)
        return EXIT_PIFILE
    except EnvironmentProblem as exc:
        _report_error(exc)
        return EXIT_ENVIRONMENT
    except ImgforgeError as exc:
        _report_error(exc)
        return EXIT_EXECUTION
    except OSError as exc:
        print(f"[error] {exc}", file=sys.stderr)
        return EXIT_EXECUTION
    finally:
        if config is not None and config.dry_run is not None and backend is not None:
            config.dry_run.write_text(backend.render_log())


def _stdout_logger(stage: str, origin: SourceLine | None, message: str) -> None:
    if origin is not None:
        print(render_log(stage, message, pifile=origin.file.name, line=origin.line_no))
    else:
        print(render_log(stage, message))


def _report_error(exc: ImgforgeError) -> None:
    stage = exc.stage or "error"
    context = ""
    if exc.origin is not None:
        context = f"{exc.origin.file}:{exc.origin.line_no}: "
    detail = f"{context}{exc.args[0]}"
    if isinstance(exc, CommandFailed):
        detail += f" (exit status {exc.status})"
    print(f"[{stage}] {detail}", file=sys.stderr)


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity >= 2:
        level = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    elif verbosity < 0:
        level = logging.ERROR
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s: %(message)s")


def entrypoint() -> None:
    sys.exit(main())
