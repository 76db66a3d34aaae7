"""Versioned checkpoint container.

Layout (little-endian)::

    b"MEMR"  u16 version  u32 section_count
    section_count x [u16 name_len, name (utf-8), u64 offset, u64 length, u32 crc32]
    payloads

Offsets are absolute.  Each payload is checked against its CRC on load.
"""

from __future__ import annotations

import os
import struct
import zlib

MAGIC = b"MEMR"
VERSION = 1


class CheckpointError(Exception):
    pass


def write_container(path, sections: dict[str, bytes]) -> None:
    names = list(sections)
    table_size = sum(2 + len(n.encode()) + 8 + 8 + 4 for n in names)
    offset = 4 + 2 + 4 + table_size
    table, payloads = [], []
    for name in names:
        data = sections[name]
        raw = name.encode()
        table.append(struct.pack("<H", len(raw)) + raw
                     + struct.pack("<QQI", offset, len(data), zlib.crc32(data)))
        payloads.append(data)
        offset += len(data)
    blob = MAGIC + struct.pack("<HI", VERSION, len(names)) + b"".join(table) + b"".join(payloads)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read_container(path) -> dict[str, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise CheckpointError("header: bad magic bytes")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"header: unsupported format version {version}")
    pos = 10
    out = {}
    for i in range(count):
        try:
            (n,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2:pos + 2 + n].decode()
            offset, length, crc = struct.unpack_from("<QQI", blob, pos + 2 + n)
        except (struct.error, UnicodeDecodeError):
            raise CheckpointError(f"section table: entry {i} truncated") from None
        pos += 2 + n + 20
        data = blob[offset:offset + length]
        if len(data) != length:
            raise CheckpointError(f"section {name!r}: truncated")
        if zlib.crc32(data) != crc:
            raise CheckpointError(f"section {name!r}: checksum mismatch")
        out[name] = data
    return out
