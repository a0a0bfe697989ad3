"""Mount planning for the chroot stage.

Builds the ordered list of attach/mount/bind/copy steps that turn a raw
image into a usable chroot, and the exact reverse teardown.  The plan is
pure data: loop devices are not known until attachment, so actions refer
to them through the ``<loop>`` placeholder, and the chroot directory
through whatever ``root`` string the caller supplies (the dry-run default
is the stable ``<root>`` token, which keeps action logs reproducible).

Setup order: loop attach, root partition mount, bind mounts for /dev,
/sys, /proc and /dev/pts, a bind of the host's resolv.conf for DNS, one
copy per static emulator binary, then any additional partitions named by
the guest's /etc/fstab, shallowest mount point first.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

from .errors import RootPartitionUnmountable
from .image import PartitionTable

if TYPE_CHECKING:
    from .plan import ExecutionPlan

logger = logging.getLogger(__name__)

LOOP_TOKEN = "<loop>"
ROOT_TOKEN = "<root>"

BIND_SOURCES = ("/dev", "/sys", "/proc", "/dev/pts")
RESOLV_CONF = "/etc/resolv.conf"
EMULATOR_DIR = "usr/bin"

# device specs that name kernel pseudo-filesystems, never partitions
PSEUDO_SPECS = frozenset({"proc", "sysfs", "tmpfs", "devtmpfs", "devpts", "swap", "none"})

_PARTUUID = re.compile(r"^PARTUUID=([0-9a-f]{8})-0*(\d+)$")
_DEV_PARTITION = re.compile(r"^/dev/(?:mmcblk\d+p|sd[a-z]+)(\d+)$")


class MountKind(Enum):
    LOOP_ATTACH = "loop-attach"
    MOUNT_PARTITION = "mount-partition"
    BIND_MOUNT = "bind-mount"
    COPY_EMULATOR = "copy-emulator"
    UNMOUNT = "unmount"
    REMOVE_EMULATOR = "remove-emulator"
    LOOP_DETACH = "loop-detach"


_TEARDOWN_KIND = {
    MountKind.LOOP_ATTACH: MountKind.LOOP_DETACH,
    MountKind.MOUNT_PARTITION: MountKind.UNMOUNT,
    MountKind.BIND_MOUNT: MountKind.UNMOUNT,
    MountKind.COPY_EMULATOR: MountKind.REMOVE_EMULATOR,
}


@dataclass(frozen=True)
class MountAction:
    kind: MountKind
    source: str
    target: str
    ordinal: int


@dataclass(frozen=True)
class FstabEntry:
    device_spec: str
    mount_point: str
    fs_type: str
    options: str
    dump: int
    passno: int


def parse_fstab(text: str) -> list[FstabEntry]:
    """Parse fstab text: six whitespace-separated fields per line.

    Blank lines and ``#`` comments are skipped; malformed lines are skipped
    with a warning rather than aborting, since guest fstabs are not under
    this tool's control.
    """
    entries: list[FstabEntry] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 6:
            logger.warning("fstab line %d has %d fields (expected 6), skipped: %s",
                           line_no, len(fields), line)
            continue
        try:
            dump, passno = int(fields[4]), int(fields[5])
        except ValueError:
            logger.warning("fstab line %d has non-numeric dump/pass fields, skipped: %s",
                           line_no, line)
            continue
        entries.append(FstabEntry(
            device_spec=fields[0],
            mount_point=fields[1],
            fs_type=fields[2],
            options=fields[3],
            dump=dump,
            passno=passno,
        ))
    return entries


def map_fstab_device(spec: str, table: PartitionTable) -> int | None:
    """Map an fstab device spec to a partition slot of the image, if any.

    ``PARTUUID=xxxxxxxx-NN`` matches when the hex prefix equals the image's
    disk id; ``/dev/mmcblk0pN`` and ``/dev/sdaN`` map to slot N directly.
    Pseudo-filesystems map to nothing silently; anything else unmappable
    (LABEL=, UUID=, other devices) is skipped with a warning because
    resolving it would require reading filesystem superblocks.
    """
    if spec in PSEUDO_SPECS:
        return None
    match = _PARTUUID.match(spec)
    if match:
        disk_hex, slot_text = match.groups()
        slot = int(slot_text)
        if disk_hex == f"{table.disk_id:08x}" and 1 <= slot <= 4:
            return slot
        logger.warning("fstab device %s does not match disk id %08x, skipped",
                       spec, table.disk_id)
        return None
    match = _DEV_PARTITION.match(spec)
    if match:
        slot = int(match.group(1))
        if 1 <= slot <= 4:
            return slot
        logger.warning("fstab device %s names partition %d, outside the 4 MBR slots",
                       spec, slot)
        return None
    logger.warning("fstab device %s cannot be mapped to a partition, skipped", spec)
    return None


def discover_emulators(env_path: str | None = None) -> list[str]:
    """Find static user-mode emulator binaries (qemu-*-static) on the host PATH."""
    path_var = env_path if env_path is not None else os.environ.get("PATH", "")
    found: dict[str, str] = {}
    for directory in path_var.split(os.pathsep):
        if not directory:
            continue
        try:
            names = sorted(os.listdir(directory))
        except OSError:
            continue
        for name in names:
            if name.startswith("qemu-") and name.endswith("-static") and name not in found:
                candidate = os.path.join(directory, name)
                if os.path.isfile(candidate) and os.access(candidate, os.X_OK):
                    found[name] = candidate
    return [found[name] for name in sorted(found)]


def partition_device(base: str, index: int) -> str:
    """Partition node name for a disk device: sda -> sda2, mmcblk0 -> mmcblk0p2.

    The loop placeholder follows the loop-device convention (loop3p1), so a
    substituted real device keeps the right separator.
    """
    if base == LOOP_TOKEN or (base and base[-1].isdigit()):
        return f"{base}p{index}"
    return f"{base}{index}"


def build_mount_plan(plan: "ExecutionPlan", table: PartitionTable,
                     guest_fstab: str | None = None, *,
                     root: str = ROOT_TOKEN,
                     emulators: Sequence[str] | None = None) -> list[MountAction]:
    """Produce the ordered setup actions for the plan's chroot environment.

    ``guest_fstab`` text, when available, contributes mounts for additional
    partitions; entries for "/" are skipped (the root is already mounted
    from the plan's partition index) and a mismatch only warns, since FROM
    may legitimately override the root partition.
    """
    actions = base_mount_actions(plan, table, root=root, emulators=emulators)
    if guest_fstab is not None:
        occupied = {a.target for a in actions if a.kind is not MountKind.LOOP_ATTACH}
        actions += fstab_mount_actions(
            plan, table, guest_fstab,
            root=root, start_ordinal=len(actions), already_mounted=occupied,
        )
    return actions


def base_mount_actions(plan: "ExecutionPlan", table: PartitionTable, *,
                       root: str = ROOT_TOKEN,
                       emulators: Sequence[str] | None = None) -> list[MountAction]:
    """Loop attach, root mount, system binds, resolv.conf, emulator copies."""
    from .source import TargetKind

    index = plan.partition_index
    if not 1 <= index <= len(table.entries) or table.entries[index - 1].empty:
        raise RootPartitionUnmountable(
            f"partition {index} is not present in the image's partition table"
        )
    actions: list[MountAction] = []

    def add(kind: MountKind, source: str, target: str) -> None:
        actions.append(MountAction(kind=kind, source=source, target=target,
                                   ordinal=len(actions)))

    image = plan.destination.path
    if plan.destination.kind is TargetKind.BLOCK_DEVICE:
        # a real device already exposes partition nodes; no loop indirection
        root_source = partition_device(image, index)
    else:
        add(MountKind.LOOP_ATTACH, image, LOOP_TOKEN)
        root_source = f"{LOOP_TOKEN}p{index}"
    add(MountKind.MOUNT_PARTITION, root_source, root)
    for bind in BIND_SOURCES:
        add(MountKind.BIND_MOUNT, bind, root + bind)
    add(MountKind.BIND_MOUNT, RESOLV_CONF, root + RESOLV_CONF)
    emulator_paths = list(emulators) if emulators is not None else discover_emulators()
    for emulator in emulator_paths:
        add(MountKind.COPY_EMULATOR, emulator, f"{root}/{EMULATOR_DIR}/{Path(emulator).name}")
    return actions


def fstab_mount_actions(plan: "ExecutionPlan", table: PartitionTable, fstab_text: str, *,
                        root: str = ROOT_TOKEN, start_ordinal: int = 0,
                        already_mounted: set[str] | None = None) -> list[MountAction]:
    """Mounts for mappable fstab entries, shallowest mount point first."""
    from .source import TargetKind

    device_base = (plan.destination.path
                   if plan.destination.kind is TargetKind.BLOCK_DEVICE else LOOP_TOKEN)
    occupied = set(already_mounted or ())
    pending: list[tuple[int, int, int]] = []  # (depth, position, slot) per mount point
    targets: dict[int, str] = {}
    for position, entry in enumerate(parse_fstab(fstab_text)):
        if entry.fs_type == "swap":
            continue
        slot = map_fstab_device(entry.device_spec, table)
        if slot is None:
            continue
        if entry.mount_point == "/":
            if slot != plan.partition_index:
                logger.warning(
                    "guest fstab maps / to partition %d, but partition %d is mounted as root",
                    slot, plan.partition_index,
                )
            continue
        if not entry.mount_point.startswith("/"):
            logger.warning("fstab mount point %s is not absolute, skipped", entry.mount_point)
            continue
        if table.entries[slot - 1].empty:
            logger.warning("fstab names partition %d, which is an empty slot", slot)
            continue
        target = root + entry.mount_point.rstrip("/")
        if target in occupied:
            continue
        occupied.add(target)
        depth = entry.mount_point.rstrip("/").count("/")
        pending.append((depth, position, slot))
        targets[position] = target

    actions: list[MountAction] = []
    for depth, position, slot in sorted(pending):
        actions.append(MountAction(
            kind=MountKind.MOUNT_PARTITION,
            source=partition_device(device_base, slot),
            target=targets[position],
            ordinal=start_ordinal + len(actions),
        ))
    return actions


def teardown_actions(setup: Sequence[MountAction]) -> list[MountAction]:
    """The exact reverse of a setup list, with each kind swapped to its undo."""
    torn: list[MountAction] = []
    for action in reversed(setup):
        swapped = _TEARDOWN_KIND.get(action.kind)
        if swapped is None:
            raise ValueError(f"{action.kind.value} is not a setup action")
        torn.append(replace(action, kind=swapped))
    return torn
