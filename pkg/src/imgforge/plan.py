"""Stage assignment and plan construction.

Commands execute in three fixed stages regardless of where they appear in
the file: *setup* (FROM/TO/INPLACE) resolves source and destination,
*prepare* (PUMP) grows the image, and *chroot* (RUN/HOST/INSTALL/PATH)
modifies its contents.  Within a stage, textual order is preserved; HOST
is interleaved with RUN/INSTALL so that a cross-compile step can precede
the INSTALL of its output.
"""

from __future__ import annotations

import logging
import posixpath
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Callable

from .errors import (
    ConflictingSource,
    InvalidPartitionIndex,
    MissingSource,
    PifileError,
)
from .image import parse_size
from .pifile import Command, CommandKind, Pifile
from .source import (
    SourceKind,
    SourceSpec,
    TargetKind,
    TargetSpec,
    classify_source,
    default_probe,
    is_url,
)

logger = logging.getLogger(__name__)

DEFAULT_PARTITION_INDEX = 2


class Stage(IntEnum):
    SETUP = 1
    PREPARE = 2
    CHROOT = 3

    @property
    def label(self) -> str:
        return self.name.lower()


_STAGE_BY_KIND: dict[CommandKind, Stage] = {
    CommandKind.FROM: Stage.SETUP,
    CommandKind.TO: Stage.SETUP,
    CommandKind.INPLACE: Stage.SETUP,
    CommandKind.PUMP: Stage.PREPARE,
    CommandKind.RUN: Stage.CHROOT,
    CommandKind.HOST: Stage.CHROOT,
    CommandKind.INSTALL: Stage.CHROOT,
    CommandKind.PATH: Stage.CHROOT,
}


@dataclass
class PlanDefaults:
    partition_index: int = DEFAULT_PARTITION_INDEX
    probe: Callable[[str], SourceKind | None] | None = None  # None = filesystem probe


@dataclass
class ExecutionPlan:
    source: SourceSpec
    destination: TargetSpec
    inplace: bool
    pump_bytes: int
    partition_index: int
    path_extensions: list[str]
    staged: dict[Stage, list[Command]]
    pifile_path: Path


def assign_stages(pifile: Pifile) -> dict[Stage, list[Command]]:
    """Partition commands over the three stages, keeping textual order inside each."""
    staged: dict[Stage, list[Command]] = {stage: [] for stage in Stage}
    for command in pifile.commands:
        stage = _STAGE_BY_KIND.get(command.kind)
        if stage is None:
            raise PifileError(
                f"{command.kind.value} must be resolved before staging", origin=command.origin
            )
        staged[stage].append(command)
    return staged


def build_plan(pifile: Pifile, defaults: PlanDefaults | None = None) -> ExecutionPlan:
    """Resolve source, destination, growth, and PATH semantics into a plan.

    Exactly one resolution root is required: FROM (optionally paired with
    TO) or INPLACE.  A missing TO defaults the destination to
    ``<pifile stem>.img`` next to the Pifile.  Relative source and
    destination paths are anchored at the Pifile's directory.
    """
    defaults = defaults or PlanDefaults()
    probe = defaults.probe or default_probe
    staged = assign_stages(pifile)
    setup = staged[Stage.SETUP]
    froms = [c for c in setup if c.kind is CommandKind.FROM]
    inplaces = [c for c in setup if c.kind is CommandKind.INPLACE]
    tos = [c for c in setup if c.kind is CommandKind.TO]

    if not froms and not inplaces:
        raise MissingSource("Pifile declares neither FROM nor INPLACE")
    if froms and inplaces:
        raise ConflictingSource("FROM and INPLACE are mutually exclusive",
                                origin=inplaces[0].origin)
    if len(froms) > 1:
        raise ConflictingSource("multiple FROM directives", origin=froms[1].origin)
    if len(inplaces) > 1:
        raise ConflictingSource("multiple INPLACE directives", origin=inplaces[1].origin)
    if tos and inplaces:
        raise ConflictingSource("TO cannot be combined with INPLACE", origin=tos[0].origin)

    base_dir = pifile.source_path.parent

    if inplaces:
        locator = _anchor(inplaces[0].args[0], base_dir)
        kind = classify_source(locator, probe)
        partition_index = defaults.partition_index
        source = SourceSpec(kind=kind, locator=locator, partition_index=partition_index)
        target_kind = (TargetKind.BLOCK_DEVICE if kind is SourceKind.BLOCK_DEVICE
                       else TargetKind.LOCAL_FILE)
        destination = TargetSpec(kind=target_kind, path=locator)
        inplace = True
    else:
        from_cmd = froms[0]
        partition_index = _partition_index(from_cmd, defaults.partition_index)
        raw = from_cmd.args[0]
        locator = raw if is_url(raw) else _anchor(raw, base_dir)
        kind = classify_source(locator, probe)
        source = SourceSpec(kind=kind, locator=locator, partition_index=partition_index)
        if tos:
            if len(tos) > 1:
                logger.warning(
                    "multiple TO directives; using the last one (%s:%d)",
                    tos[-1].origin.file, tos[-1].origin.line_no,
                )
            dest_path = _anchor(tos[-1].args[0], base_dir)
        else:
            dest_path = str(base_dir / f"{pifile.source_path.stem}.img")
        target_kind = (TargetKind.BLOCK_DEVICE
                       if probe(dest_path) is SourceKind.BLOCK_DEVICE
                       else TargetKind.LOCAL_FILE)
        destination = TargetSpec(kind=target_kind, path=dest_path)
        inplace = False

    pump_bytes = sum(parse_size(c.args[0]) for c in staged[Stage.PREPARE])
    path_extensions = [c.args[0] for c in staged[Stage.CHROOT] if c.kind is CommandKind.PATH]

    return ExecutionPlan(
        source=source,
        destination=destination,
        inplace=inplace,
        pump_bytes=pump_bytes,
        partition_index=partition_index,
        path_extensions=path_extensions,
        staged=staged,
        pifile_path=pifile.source_path,
    )


def _anchor(path_text: str, base_dir: Path) -> str:
    """Resolve a Pifile-relative path against the Pifile's directory."""
    p = Path(path_text)
    if p.is_absolute():
        return path_text
    return str(base_dir / p)


def _partition_index(from_cmd: Command, fallback: int) -> int:
    if len(from_cmd.args) < 2:
        return fallback
    raw = from_cmd.args[1]
    try:
        index = int(raw)
    except ValueError:
        raise InvalidPartitionIndex(
            f"partition index must be a positive integer, got {raw!r}",
            origin=from_cmd.origin,
        ) from None
    if index < 1:
        raise InvalidPartitionIndex(
            f"partition index must be >= 1, got {index}", origin=from_cmd.origin
        )
    return index


def validate_plan(plan: ExecutionPlan) -> list[str]:
    """Non-fatal consistency findings, in Pifile order where applicable.

    A missing INSTALL source is only a warning: HOST steps routinely build
    the file during execution.  When an earlier HOST command mentions the
    source (or its directory), the warning notes the deferred existence
    instead of flagging a missing file.
    """
    warnings: list[str] = []
    chroot = plan.staged[Stage.CHROOT]
    if not chroot:
        warnings.append("no guest modifications: the chroot stage is empty")
    if plan.pump_bytes > 0 and plan.destination.kind is TargetKind.BLOCK_DEVICE:
        warnings.append(
            f"PUMP requested but destination {plan.destination.path} "
            "is a block device that cannot grow"
        )

    host_texts: list[str] = []
    for command in chroot:
        if command.kind is CommandKind.HOST:
            host_texts.append(command.args[0])
        elif command.kind is CommandKind.INSTALL:
            src_arg = command.args[-2]
            src_path = Path(src_arg)
            if not src_path.is_absolute():
                src_path = command.origin.file.parent / src_path
            if src_path.exists():
                continue
            hint = posixpath.dirname(src_arg) or src_arg
            if any(hint in text or src_arg in text for text in host_texts):
                warnings.append(
                    f"deferred existence: INSTALL source {src_arg} does not exist yet; "
                    "an earlier HOST step appears to produce it"
                )
            else:
                warnings.append(f"INSTALL source does not exist: {src_arg}")
    return warnings
