"""Write-ahead redo log.

File format: magic "SAGELOG1", then length-prefixed records, little-endian:

    u32 payload length | payload bytes | u64 FNV-1a(payload)

A record whose length field runs past end-of-file, or whose checksum does
not validate, ends the readable portion of the log: everything from the
first bad record on is discarded (torn tail after a crash).
"""
from __future__ import annotations

import os
import struct
from typing import Callable, Optional

from .errors import LogWriteFailed

MAGIC = b"SAGELOG1"
_LEN = struct.Struct("<I")
_SUM = struct.Struct("<Q")

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes, h: int = FNV_OFFSET_BASIS) -> int:
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


class RedoLog:
    """Append-only record log with per-record checksums.

    ``hook`` (when set) is called with a point name before/after durability
    events; crash-injection tests use it to raise SimulatedCrash at chosen
    moments.
    """

    def __init__(self, path: str):
        self.path = path
        self.hook: Optional[Callable[[str], None]] = None
        if os.path.exists(path):
            self._fh = open(path, "r+b")
            if self._fh.read(len(MAGIC)) != MAGIC:
                raise LogWriteFailed(f"{path}: not a redo log")
            self._fh.seek(0, os.SEEK_END)
        else:
            self._fh = open(path, "w+b")
            self._fh.write(MAGIC)
            self._fh.flush()

    def append(self, payload: bytes) -> None:
        if self.hook:
            self.hook("log_pre_append")
        try:
            self._fh.write(_LEN.pack(len(payload)))
            self._fh.write(payload)
            self._fh.write(_SUM.pack(fnv1a64(payload)))
            self._fh.flush()
        except OSError as e:  # pragma: no cover - environment failure
            raise LogWriteFailed(str(e)) from e
        if self.hook:
            self.hook("log_record_durable")

    def records(self) -> list[bytes]:
        """All valid payloads in append order, truncating at the first
        torn or corrupt record."""
        self._fh.flush()
        with open(self.path, "rb") as fh:
            blob = fh.read()
        out: list[bytes] = []
        off = len(MAGIC)
        total = len(blob)
        while off < total:
            if off + _LEN.size > total:
                break
            (n,) = _LEN.unpack_from(blob, off)
            end = off + _LEN.size + n + _SUM.size
            if end > total:
                break
            payload = blob[off + _LEN.size:off + _LEN.size + n]
            (want,) = _SUM.unpack_from(blob, end - _SUM.size)
            if fnv1a64(payload) != want:
                break
            out.append(payload)
            off = end
        return out

    def close(self) -> None:
        self._fh.close()
