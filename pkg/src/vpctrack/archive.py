"""Flat frame-archive container for the record-then-transfer workflow.

Layout: magic, 8-byte big-endian header length, header JSON with an offset
table, then the raw blobs back to back. Blobs are PNG frames plus the
manifest JSON, so the receiver can replay the exact recorded stream.
"""
from __future__ import annotations

import json
import struct
from typing import Iterable

MAGIC = b"VPCARCH1"
_LEN = struct.Struct(">Q")


class ArchiveError(Exception):
    pass


def build_archive(entries: Iterable[tuple[str, bytes]]) -> bytes:
    """Concatenate named blobs behind an offset-table header."""
    blobs = list(entries)
    names = [name for name, _ in blobs]
    if len(set(names)) != len(names):
        raise ArchiveError("duplicate entry names")
    table = []
    offset = 0
    for name, data in blobs:
        table.append({"name": name, "offset": offset, "size": len(data)})
        offset += len(data)
    header = json.dumps({"entries": table}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + _LEN.pack(len(header)) + header + b"".join(data for _, data in blobs)


def read_archive(data: bytes) -> dict[str, bytes]:
    if data[: len(MAGIC)] != MAGIC:
        raise ArchiveError("bad magic")
    pos = len(MAGIC)
    if len(data) < pos + _LEN.size:
        raise ArchiveError("truncated header length")
    (header_len,) = _LEN.unpack_from(data, pos)
    pos += _LEN.size
    if len(data) < pos + header_len:
        raise ArchiveError("truncated header")
    try:
        header = json.loads(data[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"bad header json: {exc}") from exc
    base = pos + header_len
    out = {}
    for entry in header["entries"]:
        start = base + entry["offset"]
        end = start + entry["size"]
        if end > len(data):
            raise ArchiveError(f"entry {entry['name']} extends past the archive")
        out[entry["name"]] = data[start:end]
    return out
