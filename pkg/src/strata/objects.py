"""Block-granular object engine over the device pool.

Objects are sparse arrays of fixed-size blocks placed on devices according
to their layout. Striped layouts with one parity unit maintain XOR parity
per stripe group (read-modify-write for partial rows) and serve degraded
reads by reconstruction while at most one member device is failed.

Placement bookkeeping (which physical device block holds which logical unit)
is volatile; after a crash it is rebuilt by replaying the redo log, so only
logged writes are reachable post-recovery. Direct (unlogged) writes are
write-through: immediately visible, not crash-durable.
"""
from __future__ import annotations

import heapq
import pickle
from dataclasses import dataclass
from typing import Optional

from .clock import VirtualClock
from .core import (
    DATA,
    PARITY,
    BlockSpec,
    Extent,
    Layout,
    Mirrored,
    ObjectId,
    Placement,
    Striped,
    Tiered,
    layout_devices,
    layout_from_dict,
    layout_map,
    layout_to_dict,
    striped_group_placements,
)
from .devices import Device, DevicePool
from .errors import (
    AlreadyExists,
    BadLength,
    DeviceFailed,
    InvalidLayout,
    OutOfCapacity,
    UnknownObject,
    UnrecoverableLoss,
)
from .indices import IndexRegistry
from .telemetry import AddbStore

SYSTEM_OBJECTS_INDEX = "sys.objects"


def xor_bytes(a: bytes, b: bytes) -> bytes:
    n = len(a)
    return (int.from_bytes(a, "little") ^ int.from_bytes(b, "little")).to_bytes(n, "little")


@dataclass
class ObjectMeta:
    id: ObjectId
    spec: BlockSpec
    layout: Layout
    size_blocks: int = 0
    created_at: float = 0.0

    def encode(self) -> bytes:
        return pickle.dumps({
            "id": self.id,
            "block_size": self.spec.block_size,
            "layout": layout_to_dict(self.layout),
            "size_blocks": self.size_blocks,
            "created_at": self.created_at,
        }, protocol=4)

    @classmethod
    def decode(cls, blob: bytes) -> "ObjectMeta":
        d = pickle.loads(blob)
        return cls(d["id"], BlockSpec(d["block_size"]), layout_from_dict(d["layout"]),
                   d["size_blocks"], d["created_at"])


class BlockAllocator:
    """Maps (object, device-local logical index) to physical device blocks."""

    def __init__(self, device: Device):
        self.device = device
        self._map: dict[tuple[ObjectId, int], int] = {}
        self._free: list[int] = []  # heap of recycled physical indices
        self._next = 0

    @property
    def allocated(self) -> int:
        return len(self._map)

    def lookup(self, obj: ObjectId, local: int) -> Optional[int]:
        return self._map.get((obj, local))

    def ensure(self, obj: ObjectId, local: int) -> int:
        key = (obj, local)
        phys = self._map.get(key)
        if phys is not None:
            return phys
        if self._free:
            phys = heapq.heappop(self._free)
        elif self._next < self.device.n_blocks:
            phys = self._next
            self._next += 1
        else:
            raise OutOfCapacity(self.device.device_id)
        self._map[key] = phys
        return phys

    def free_unit(self, obj: ObjectId, local: int) -> None:
        phys = self._map.pop((obj, local), None)
        if phys is not None:
            heapq.heappush(self._free, phys)

    def free_object(self, obj: ObjectId) -> None:
        for key in [k for k in self._map if k[0] == obj]:
            heapq.heappush(self._free, self._map.pop(key))

    def reset(self) -> None:
        self._map.clear()
        self._free.clear()
        self._next = 0


class ObjectStore:
    """Create/read/write/delete objects; single metadata domain.

    Mutating methods here apply immediately (they are the redo-apply path).
    Callers wanting crash atomicity go through the transaction engine, which
    logs ops and then calls into this class.
    """

    def __init__(self, pool: DevicePool, indices: IndexRegistry,
                 clock: VirtualClock, addb: Optional[AddbStore] = None):
        self.pool = pool
        self.indices = indices
        self.clock = clock
        self.addb = addb
        self._meta: dict[ObjectId, ObjectMeta] = {}
        self._tombstones: set[ObjectId] = set()
        self._allocators: dict[str, BlockAllocator] = {}
        self._id_counter = 1
        indices.create(SYSTEM_OBJECTS_INDEX, exist_ok=True)

    # -- helpers -----------------------------------------------------------

    def allocator(self, device_id: str) -> BlockAllocator:
        alloc = self._allocators.get(device_id)
        if alloc is None:
            alloc = BlockAllocator(self.pool.get(device_id))
            self._allocators[device_id] = alloc
        return alloc

    def fresh_id(self) -> ObjectId:
        while self._id_counter in self._meta or self._id_counter in self._tombstones:
            self._id_counter += 1
        oid = self._id_counter
        self._id_counter += 1
        return oid

    def meta(self, obj: ObjectId) -> ObjectMeta:
        try:
            return self._meta[obj]
        except KeyError:
            raise UnknownObject(str(obj)) from None

    def exists(self, obj: ObjectId) -> bool:
        return obj in self._meta

    def ids(self) -> list[ObjectId]:
        return sorted(self._meta)

    def _sys_key(self, obj: ObjectId) -> bytes:
        return obj.to_bytes(16, "big")

    def _mirror_meta(self, meta: ObjectMeta) -> None:
        self.indices.get(SYSTEM_OBJECTS_INDEX).put([(self._sys_key(meta.id), meta.encode())])

    def _emit(self, metric: str, value: float, tags: dict[str, str]) -> None:
        if self.addb is not None:
            self.addb.emit("object", metric, value, tags=tags)

    def tier_occupancy(self) -> dict[int, float]:
        """Fraction of each tier's capacity currently allocated."""
        used = {t: 0 for t in (1, 2, 3, 4)}
        cap = {t: 0 for t in (1, 2, 3, 4)}
        for dev in self.pool.all():
            if dev.spare:
                continue
            cap[dev.tier] += dev.n_blocks
            alloc = self._allocators.get(dev.device_id)
            used[dev.tier] += alloc.allocated if alloc else 0
        return {t: (used[t] / cap[t]) if cap[t] else 0.0 for t in (1, 2, 3, 4)}

    # -- lifecycle -----------------------------------------------------------

    def create(self, obj: ObjectId, spec: BlockSpec, layout: Layout,
               replay: bool = False) -> ObjectMeta:
        if obj in self._meta:
            if replay:
                return self._meta[obj]
            raise AlreadyExists(f"object {obj} exists")
        if obj in self._tombstones and not replay:
            raise AlreadyExists(f"object id {obj} was deleted and is retired")
        for dev_id in sorted(layout_devices(layout)):
            dev = self.pool.get(dev_id)
            if dev.block_size != spec.block_size:
                raise InvalidLayout(
                    f"device {dev_id} has block size {dev.block_size}, "
                    f"object wants {spec.block_size}")
        meta = ObjectMeta(obj, spec, layout, 0, self.clock.now)
        self._meta[obj] = meta
        self._tombstones.discard(obj)
        self._mirror_meta(meta)
        return meta

    def delete(self, obj: ObjectId, replay: bool = False) -> None:
        if obj not in self._meta:
            if replay:
                self._tombstones.add(obj)
                return
            raise UnknownObject(str(obj))
        meta = self._meta.pop(obj)
        for dev_id in layout_devices(meta.layout):
            if dev_id in self._allocators:
                self._allocators[dev_id].free_object(obj)
        self._tombstones.add(obj)
        self.indices.get(SYSTEM_OBJECTS_INDEX).delete([self._sys_key(obj)])

    def set_layout(self, obj: ObjectId, new_layout: Layout, replay: bool = False) -> None:
        """Swap (part of) an object's layout.

        Units whose governing sub-layout changes are released; the caller is
        responsible for rewriting their data under the new placement (HSM
        migration and HA rebuild both do, inside the same transaction).
        """
        meta = self.meta(obj)
        old = meta.layout
        freed_groups: set[tuple[str, int]] = set()
        for b in range(meta.size_blocks):
            old_sub = old.resolve(b) if isinstance(old, Tiered) else old
            new_sub = new_layout.resolve(b) if isinstance(new_layout, Tiered) else new_layout
            if old_sub == new_sub:
                continue
            for pl in layout_map(old_sub, Extent(b, 1)):
                key = (pl.device_id, pl.local_index)
                if key in freed_groups:
                    continue
                freed_groups.add(key)
                if pl.device_id in self._allocators:
                    self._allocators[pl.device_id].free_unit(obj, pl.local_index)
        meta.layout = new_layout
        self._mirror_meta(meta)

    # -- unit-level I/O ------------------------------------------------------

    def _read_unit(self, meta: ObjectMeta, pl: Placement) -> tuple[bytes, float]:
        """Bytes of one placed unit; zeros when never allocated."""
        dev = self.pool.get(pl.device_id)
        if dev.failed:
            raise DeviceFailed(pl.device_id)
        phys = self.allocator(pl.device_id).lookup(meta.id, pl.local_index)
        if phys is None:
            return bytes(meta.spec.block_size), 0.0
        data, cost = dev.read_block(phys)
        return data, cost

    def _write_unit(self, meta: ObjectMeta, pl: Placement, data: bytes) -> float:
        dev = self.pool.get(pl.device_id)
        if dev.failed:
            raise DeviceFailed(pl.device_id)
        phys = self.allocator(pl.device_id).ensure(meta.id, pl.local_index)
        return dev.write_block(phys, data)

    def _reconstruct(self, meta: ObjectMeta, sub: Striped, pl: Placement) -> tuple[bytes, float]:
        """XOR of the surviving units of pl's parity group."""
        if not isinstance(sub, Striped) or sub.parity_units != 1:
            raise UnrecoverableLoss(
                f"object {meta.id}: no parity to reconstruct unit on {pl.device_id}",
                objects=[meta.id])
        acc = bytes(meta.spec.block_size)
        cost = 0.0
        for peer in striped_group_placements(sub, pl.group):
            if peer.device_id == pl.device_id:
                continue
            try:
                data, c = self._read_unit(meta, peer)
            except DeviceFailed:
                raise UnrecoverableLoss(
                    f"object {meta.id}: two failures in one parity group",
                    objects=[meta.id]) from None
            acc = xor_bytes(acc, data)
            cost += c
        return acc, cost

    def read_unit_degraded(self, meta: ObjectMeta, sub: Layout, pl: Placement) -> tuple[bytes, float]:
        try:
            return self._read_unit(meta, pl)
        except DeviceFailed:
            return self._reconstruct(meta, sub, pl)

    # -- block I/O -----------------------------------------------------------

    def _resolve(self, layout: Layout, block: int) -> Layout:
        return layout.resolve(block) if isinstance(layout, Tiered) else layout

    def write(self, obj: ObjectId, start_block: int, data: bytes,
              replay: bool = False) -> float:
        meta = self.meta(obj)
        bs = meta.spec.block_size
        if not data or len(data) % bs:
            raise BadLength(f"write length {len(data)} is not a multiple of {bs}")
        nblocks = len(data) // bs
        new = {start_block + i: data[i * bs:(i + 1) * bs] for i in range(nblocks)}
        cost = 0.0
        dev_bytes: dict[str, int] = {}

        def put(pl: Placement, blob: bytes) -> None:
            nonlocal cost
            cost += self._write_unit(meta, pl, blob)
            dev_bytes[pl.device_id] = dev_bytes.get(pl.device_id, 0) + len(blob)

        blocks = sorted(new)
        i = 0
        while i < len(blocks):
            b = blocks[i]
            sub = self._resolve(meta.layout, b)
            if isinstance(sub, Mirrored):
                online = [d for d in sub.devices if not self.pool.get(d).failed]
                if not online:
                    raise DeviceFailed(f"all replicas of block {b} failed")
                for dev_id in online:
                    put(Placement(dev_id, b, DATA, b, b), new[b])
                i += 1
                continue
            if sub.parity_units == 0:
                pl = layout_map(sub, Extent(b, 1))[0]
                put(pl, new[b])
                i += 1
                continue
            # striped with parity: handle the whole stripe group at once
            n = sub.data_units
            g = b // n
            group = striped_group_placements(sub, g)
            data_pls = [p for p in group if p.role == DATA]
            parity_pl = next(p for p in group if p.role == PARITY)
            failed = [p for p in group if self.pool.get(p.device_id).failed]
            if len(failed) > 1:
                raise DeviceFailed(f"{len(failed)} failures in parity group {g}")
            # full new contents of the group: merge written blocks with the
            # current (possibly reconstructed) contents of untouched units
            full = []
            for p in data_pls:
                if p.block in new:
                    full.append(new[p.block])
                else:
                    blob, c = self.read_unit_degraded(meta, sub, p)
                    cost += c
                    full.append(blob)
            parity = bytes(bs)
            for blob in full:
                parity = xor_bytes(parity, blob)
            for p, blob in zip(data_pls, full):
                if p.block in new and not self.pool.get(p.device_id).failed:
                    put(p, blob)
            if not self.pool.get(parity_pl.device_id).failed:
                put(parity_pl, parity)
            while i < len(blocks) and blocks[i] // n == g and self._resolve(meta.layout, blocks[i]) == sub:
                i += 1

        if start_block + nblocks > meta.size_blocks:
            meta.size_blocks = start_block + nblocks
            self._mirror_meta(meta)
        self._emit("write", nblocks, {"obj": str(obj), "start": str(start_block)})
        for dev_id in sorted(dev_bytes):
            self._emit("dev_write", dev_bytes[dev_id],
                       {"device": dev_id, "tier": str(self.pool.get(dev_id).tier)})
        return cost

    def read(self, obj: ObjectId, start_block: int, block_count: int) -> tuple[bytes, float]:
        meta = self.meta(obj)
        bs = meta.spec.block_size
        out = bytearray()
        cost = 0.0
        dev_bytes: dict[str, int] = {}
        for b in range(start_block, start_block + block_count):
            sub = self._resolve(meta.layout, b)
            if isinstance(sub, Mirrored):
                blob = None
                for dev_id in sub.devices:
                    if not self.pool.get(dev_id).failed:
                        blob, c = self._read_unit(meta, Placement(dev_id, b, DATA, b, b))
                        cost += c
                        dev_bytes[dev_id] = dev_bytes.get(dev_id, 0) + bs
                        break
                if blob is None:
                    raise UnrecoverableLoss(f"all replicas of block {b} failed",
                                            objects=[obj])
            else:
                n = sub.data_units
                g, idx = divmod(b, n)
                pl = next(p for p in striped_group_placements(sub, g)
                          if p.role == DATA and p.block == b)
                blob, c = self.read_unit_degraded(meta, sub, pl)
                cost += c
                dev_bytes[pl.device_id] = dev_bytes.get(pl.device_id, 0) + bs
            out += blob
        self._emit("read", block_count, {"obj": str(obj), "start": str(start_block)})
        for dev_id in sorted(dev_bytes):
            self._emit("dev_read", dev_bytes[dev_id],
                       {"device": dev_id, "tier": str(self.pool.get(dev_id).tier)})
        return bytes(out), cost

    # -- recovery support ------------------------------------------------------

    def reset_volatile(self) -> None:
        """Drop all placement and metadata state (crash simulation)."""
        self._meta.clear()
        self._tombstones.clear()
        for alloc in self._allocators.values():
            alloc.reset()
        self._allocators.clear()
        self._id_counter = 1
