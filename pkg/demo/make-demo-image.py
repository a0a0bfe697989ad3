#!/usr/bin/env python3
"""Create base.img, a small two-partition MBR image to try imgforge against.

The image is sparse (16 MiB nominal), carries an 0x55AA boot signature, a
1 MiB FAT boot partition, and a Linux partition filling the rest.  It has
no filesystems, which is fine for dry runs; point real builds at a real OS
image instead.
"""

import struct
import sys
from pathlib import Path

SIZE = 16 * 1024 * 1024
DISK_ID = 0x1234ABCD
PARTITIONS = [
    # (slot, type, first sector, sector count, bootable)
    (1, 0x0C, 2048, 2048, True),
    (2, 0x83, 4096, SIZE // 512 - 4096, False),
]


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "base.img"
    sector = bytearray(512)
    struct.pack_into("<I", sector, 440, DISK_ID)
    for slot, type_code, start, count, bootable in PARTITIONS:
        offset = 446 + 16 * (slot - 1)
        sector[offset] = 0x80 if bootable else 0x00
        sector[offset + 1:offset + 4] = b"\xfe\xff\xff"
        sector[offset + 4] = type_code
        sector[offset + 5:offset + 8] = b"\xfe\xff\xff"
        struct.pack_into("<I", sector, offset + 8, start)
        struct.pack_into("<I", sector, offset + 12, count)
    sector[510:512] = b"\x55\xaa"
    with open(out, "wb") as fh:
        fh.write(sector)
        fh.truncate(SIZE)
    print(f"wrote {out} ({SIZE} bytes, partitions: boot 1 MiB + root)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
