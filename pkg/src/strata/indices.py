"""Ordered key-value indices with set-oriented GET/PUT/DEL/NEXT.

Keys are non-empty byte strings, unique within an index, ordered
lexicographically. NEXT is a strict-successor scan: the probe key itself is
never returned, present or not.

Durability is provided by the transaction engine: mutations routed through a
txn are replayed from the redo log after a crash. ``dump_pages`` /
``load_pages`` give a compact snapshot format (magic "SAGEIDX1") for
exporting an index wholesale.
"""
from __future__ import annotations

import struct
from bisect import bisect_left, bisect_right, insort

from .errors import AlreadyExists, CorruptLog, UnknownIndex

PAGE_MAGIC = b"SAGEIDX1"

# Sentinel distinguishing "key absent" from an empty value.
NOT_FOUND = None


class Index:
    """One ordered map of bytes -> bytes."""

    def __init__(self, index_id: str):
        self.index_id = index_id
        self._map: dict[bytes, bytes] = {}
        self._keys: list[bytes] = []  # sorted

    def __len__(self) -> int:
        return len(self._map)

    def put(self, records: dict[bytes, bytes] | list[tuple[bytes, bytes]]) -> None:
        items = records.items() if isinstance(records, dict) else records
        for key, value in items:
            if not isinstance(key, bytes) or not key:
                raise ValueError("keys must be non-empty byte strings")
            if key not in self._map:
                insort(self._keys, key)
            self._map[key] = value

    def get(self, keys: list[bytes]) -> list[bytes | None]:
        return [self._map.get(k, NOT_FOUND) for k in keys]

    def delete(self, keys: list[bytes]) -> list[bool]:
        """Remove matching records; absent keys report False without failing
        the batch."""
        acks = []
        for k in keys:
            if k in self._map:
                del self._map[k]
                i = bisect_left(self._keys, k)
                del self._keys[i]
                acks.append(True)
            else:
                acks.append(False)
        return acks

    def next(self, keys: list[bytes], count: int) -> list[list[tuple[bytes, bytes]]]:
        """Up to `count` records strictly after each probe key, ascending."""
        if count < 1:
            raise ValueError("count must be >= 1")
        out = []
        for k in keys:
            i = bisect_right(self._keys, k)
            ks = self._keys[i:i + count]
            out.append([(key, self._map[key]) for key in ks])
        return out

    def items(self) -> list[tuple[bytes, bytes]]:
        return [(k, self._map[k]) for k in self._keys]

    def first(self, count: int) -> list[tuple[bytes, bytes]]:
        return [(k, self._map[k]) for k in self._keys[:count]]

    # -- snapshot format -------------------------------------------------

    def dump_pages(self) -> bytes:
        """Serialize the whole index: magic, record count, then
        length-prefixed key/value pairs in key order (little-endian)."""
        parts = [PAGE_MAGIC, struct.pack("<Q", len(self._keys))]
        for k in self._keys:
            v = self._map[k]
            parts.append(struct.pack("<II", len(k), len(v)))
            parts.append(k)
            parts.append(v)
        return b"".join(parts)

    @classmethod
    def load_pages(cls, index_id: str, blob: bytes) -> "Index":
        if blob[:8] != PAGE_MAGIC:
            raise CorruptLog("bad index page magic")
        (n,) = struct.unpack_from("<Q", blob, 8)
        idx = cls(index_id)
        off = 16
        for _ in range(n):
            klen, vlen = struct.unpack_from("<II", blob, off)
            off += 8
            k = blob[off:off + klen]
            off += klen
            v = blob[off:off + vlen]
            off += vlen
            idx._map[k] = v
            idx._keys.append(k)
        return idx


class IndexRegistry:
    def __init__(self):
        self._indices: dict[str, Index] = {}

    def create(self, index_id: str, exist_ok: bool = False) -> Index:
        if index_id in self._indices:
            if exist_ok:
                return self._indices[index_id]
            raise AlreadyExists(f"index {index_id!r} exists")
        idx = Index(index_id)
        self._indices[index_id] = idx
        return idx

    def get(self, index_id: str) -> Index:
        try:
            return self._indices[index_id]
        except KeyError:
            raise UnknownIndex(index_id) from None

    def exists(self, index_id: str) -> bool:
        return index_id in self._indices

    def ids(self) -> list[str]:
        return sorted(self._indices)
