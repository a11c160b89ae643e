"""PGAS-style windows over memory or storage objects.

Windows follow write-through semantics: a put is visible to every
subsequent get from any rank immediately; sync only establishes durability
by flushing the dirty byte ranges through one transaction. Byte-granular
access is implemented by block read-modify-write against the object engine
underneath, so the engine itself stays whole-block.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import BlockSpec, Striped
from .errors import (
    OutOfBounds,
    OutOfCapacity,
    SizeMismatch,
    UnknownWindow,
    VerificationError,
)
from .stack import Stack

WINDOW_BLOCK_SIZE = 4096
SYSTEM_WINDOWS_INDEX = "sys.windows"

# Simulated DRAM profile; strictly faster than every storage tier.
MEM_LATENCY = 1e-7
MEM_BW = 50e9


@dataclass(frozen=True)
class WindowAccess:
    target_rank: int
    window_id: int
    offset: int
    length: int


def _block_runs(blocks: set[int]) -> list[tuple[int, int]]:
    """Consecutive dirty blocks grouped into (start, count) runs."""
    runs: list[tuple[int, int]] = []
    for b in sorted(blocks):
        if runs and b == runs[-1][0] + runs[-1][1]:
            runs[-1] = (runs[-1][0], runs[-1][1] + 1)
        else:
            runs.append((b, 1))
    return runs


class Window:
    def __init__(self, manager: "WindowManager", window_id: int, owner: int,
                 size: int, backing: str, obj_id: Optional[int], tier: int):
        self.manager = manager
        self.window_id = window_id
        self.owner = owner
        self.size = size
        self.backing = backing  # "memory" | "storage"
        self.obj_id = obj_id
        self.tier = tier
        self._mem = bytearray(size) if backing == "memory" else None
        self._dirty: set[int] = set()  # block indices pending sync

    def _check(self, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > self.size:
            raise OutOfBounds(
                f"window {self.window_id}: [{offset}, {offset + length}) "
                f"outside size {self.size}")

    def put(self, offset: int, data: bytes) -> float:
        self._check(offset, len(data))
        if self.backing == "memory":
            self._mem[offset:offset + len(data)] = data
            cost = MEM_LATENCY + len(data) / MEM_BW
        else:
            cost = self._storage_rmw(offset, data)
            bs = WINDOW_BLOCK_SIZE
            self._dirty.update(range(offset // bs, -(-(offset + len(data)) // bs)))
        if self.manager.addb is not None:
            self.manager.addb.emit("window", "put", len(data),
                                   tags={"win": str(self.window_id)})
        return cost

    def get(self, offset: int, length: int) -> tuple[bytes, float]:
        self._check(offset, length)
        if self.backing == "memory":
            data = bytes(self._mem[offset:offset + length])
            cost = MEM_LATENCY + length / MEM_BW
        else:
            data, cost = self._storage_read(offset, length)
        if self.manager.addb is not None:
            self.manager.addb.emit("window", "get", length,
                                   tags={"win": str(self.window_id)})
        return data, cost

    def sync(self) -> float:
        """Flush dirty ranges through one txn; a no-op for memory backing."""
        if self.backing == "memory" or not self._dirty:
            return 0.0
        txn = self.manager.stack.begin()
        cost = 0.0
        for b0, count in _block_runs(self._dirty):
            data, c = self.manager.stack.obj_read(self.obj_id, b0, count)
            cost += c
            txn.obj_write(self.obj_id, b0, data)
        txn.commit()
        cost += txn.apply_cost
        self._dirty.clear()
        if self.manager.addb is not None:
            self.manager.addb.emit("window", "sync", 1, tags={"win": str(self.window_id)})
        return cost

    # -- storage backing helpers ------------------------------------------------

    def _storage_read(self, offset: int, length: int) -> tuple[bytes, float]:
        if length == 0:
            return b"", 0.0
        bs = WINDOW_BLOCK_SIZE
        b0, intra = divmod(offset, bs)
        b1 = -(-(offset + length) // bs)
        data, cost = self.manager.stack.obj_read(self.obj_id, b0, b1 - b0)
        return data[intra:intra + length], cost

    def _storage_rmw(self, offset: int, data: bytes) -> float:
        if not data:
            return 0.0
        bs = WINDOW_BLOCK_SIZE
        stack = self.manager.stack
        b0, intra = divmod(offset, bs)
        b1 = -(-(offset + len(data)) // bs)
        cost = 0.0
        if intra == 0 and len(data) % bs == 0:
            return stack.obj_write_direct(self.obj_id, b0, data)
        current, c = stack.obj_read(self.obj_id, b0, b1 - b0)
        cost += c
        buf = bytearray(current)
        buf[intra:intra + len(data)] = data
        cost += stack.obj_write_direct(self.obj_id, b0, bytes(buf))
        return cost


class WindowManager:
    """Allocates windows and re-attaches storage-backed ones after a crash."""

    def __init__(self, stack: Stack):
        self.stack = stack
        self.addb = stack.addb
        self._windows: dict[int, Window] = {}
        self._next_id = 1
        self.stack.indices.create(SYSTEM_WINDOWS_INDEX, exist_ok=True)

    def alloc(self, rank: int, size: int, backing: str = "memory",
              tier: int = 1) -> Window:
        if size <= 0:
            raise SizeMismatch("window size must be positive")
        if backing not in ("memory", "storage"):
            raise ValueError(f"backing must be memory or storage, not {backing!r}")
        window_id = self._next_id
        self._next_id += 1
        obj_id = None
        if backing == "storage":
            obj_id = self.stack.objects.fresh_id()
            layout = self._pick_layout(tier, size)
            self.stack.obj_create(obj_id, BlockSpec(WINDOW_BLOCK_SIZE), layout)
            meta = struct.pack("<QQQQI", window_id, rank, size, obj_id, tier)
            self.stack.indices.create(SYSTEM_WINDOWS_INDEX, exist_ok=True)
            self.stack.idx_put(SYSTEM_WINDOWS_INDEX,
                               [(b"win:%016d" % window_id, meta)])
        win = Window(self, window_id, rank, size, backing, obj_id, tier)
        self._windows[window_id] = win
        return win

    def _pick_layout(self, tier: int, size: int) -> Striped:
        devices = [d for d in self.stack.pool.by_tier(tier) if not d.failed]
        if not devices:
            raise OutOfCapacity(f"no devices on tier {tier}")
        need_blocks = -(-size // WINDOW_BLOCK_SIZE)
        free = sum(d.n_blocks - self.stack.objects.allocator(d.device_id).allocated
                   for d in devices)
        if free < need_blocks:
            raise OutOfCapacity(f"tier {tier}: {need_blocks} blocks requested, "
                                f"{free} free")
        return Striped(len(devices), 0, tuple(d.device_id for d in devices))

    def get_window(self, window_id: int) -> Window:
        try:
            return self._windows[window_id]
        except KeyError:
            raise UnknownWindow(str(window_id)) from None

    def put(self, access: WindowAccess, data: bytes) -> float:
        if len(data) != access.length:
            raise SizeMismatch(f"access length {access.length} != data {len(data)}")
        return self.get_window(access.window_id).put(access.offset, data)

    def get(self, access: WindowAccess) -> tuple[bytes, float]:
        return self.get_window(access.window_id).get(access.offset, access.length)

    def reattach(self) -> None:
        """Rebuild storage-backed window handles from the system index
        (memory windows are volatile and do not survive)."""
        self._windows = {}
        idx = self.stack.indices.create(SYSTEM_WINDOWS_INDEX, exist_ok=True)
        for key, blob in idx.items():
            window_id, rank, size, obj_id, tier = struct.unpack("<QQQQI", blob)
            if self.stack.objects.exists(obj_id):
                self._windows[window_id] = Window(self, window_id, rank, size,
                                                  "storage", obj_id, tier)
                self._next_id = max(self._next_id, window_id + 1)


# -- STREAM kernels ----------------------------------------------------------------

STREAM_KERNELS = ("copy", "scale", "add", "triad")
# bytes moved per element per kernel, per the standard accounting
STREAM_BYTES = {"copy": 16, "scale": 16, "add": 24, "triad": 24}


def stream_kernels(a: Window, b: Window, c: Window, q: float, n: int) -> dict[str, dict]:
    """Run the four kernels over three N-element float64 windows.

    Results are verified element-wise against plain in-memory arrays; the
    returned mapping carries virtual cost and bandwidth per kernel.
    """
    nbytes = n * 8
    for w in (a, b, c):
        if w.size < nbytes:
            raise SizeMismatch(f"window {w.window_id} smaller than {nbytes} bytes")

    def read(w: Window) -> tuple[np.ndarray, float]:
        data, cost = w.get(0, nbytes)
        return np.frombuffer(data, dtype="<f8").copy(), cost

    def write(w: Window, arr: np.ndarray) -> float:
        return w.put(0, arr.astype("<f8").tobytes())

    # initial contents
    init_a = np.full(n, 1.0)
    init_b = np.full(n, 2.0)
    init_c = np.zeros(n)
    cost0 = write(a, init_a) + write(b, init_b) + write(c, init_c)

    # independent oracle: same arithmetic on plain arrays
    oa, ob, oc = init_a.copy(), init_b.copy(), init_c.copy()

    results: dict[str, dict] = {"_init_cost": {"cost": cost0}}

    def run(kernel: str) -> None:
        cost = 0.0
        if kernel == "copy":
            va, ca = read(a)
            cost += ca + write(c, va)
            oc[:] = oa
        elif kernel == "scale":
            vc, cc = read(c)
            cost += cc + write(b, q * vc)
            ob[:] = q * oc
        elif kernel == "add":
            va, ca = read(a)
            vb, cb = read(b)
            cost += ca + cb + write(c, va + vb)
            oc[:] = oa + ob
        else:  # triad
            vb, cb = read(b)
            vc, cc = read(c)
            cost += cb + cc + write(a, vb + q * vc)
            oa[:] = ob + q * oc
        results[kernel] = {
            "cost": cost,
            "bandwidth": (STREAM_BYTES[kernel] * n) / cost if cost > 0 else float("inf"),
        }

    for kernel in STREAM_KERNELS:
        run(kernel)

    # element-wise verification of the final window contents
    for w, oracle, name in ((a, oa, "a"), (b, ob, "b"), (c, oc, "c")):
        got, _ = read(w)
        if not np.array_equal(got, oracle):
            raise VerificationError(f"array {name} diverges from the oracle")
    return results
