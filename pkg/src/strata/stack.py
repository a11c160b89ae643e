"""Composition root for one storage node's engines plus the transaction
engine that makes groups of updates crash-atomic.

Transactions are redo-only: staged ops are logged, a COMMIT marker is made
durable, and only then are the ops applied to the engines. Recovery resets
all volatile engine state and replays every committed transaction from the
log in txn-id order, so recovery is idempotent and the log is the single
source of truth for metadata and logged data.
"""
from __future__ import annotations

import pickle
from typing import Callable, Optional

from .clock import VirtualClock
from .core import BlockSpec, ContainerRegistry, Layout, ObjectId, layout_from_dict, layout_to_dict
from .devices import DevicePool
from .errors import InvalidState, UnknownObject
from .indices import IndexRegistry
from .objects import SYSTEM_OBJECTS_INDEX, ObjectStore
from .telemetry import AddbStore
from .wal import RedoLog

COMMIT = "COMMIT"

Op = tuple  # ("kind", args...)


class Txn:
    """A group of staged updates; nothing is visible until commit returns."""

    def __init__(self, engine: "TxnEngine", txn_id: int):
        self._engine = engine
        self.txn_id = txn_id
        self.ops: list[Op] = []
        self.state = "open"
        self.apply_cost = 0.0

    def _stage(self, op: Op) -> None:
        if self.state != "open":
            raise InvalidState(f"txn {self.txn_id} is {self.state}")
        self.ops.append(op)

    def obj_create(self, obj: ObjectId, spec: BlockSpec, layout: Layout) -> None:
        self._stage(("obj_create", obj, spec.block_size, layout_to_dict(layout)))

    def obj_delete(self, obj: ObjectId) -> None:
        self._stage(("obj_delete", obj))

    def obj_write(self, obj: ObjectId, start_block: int, data: bytes) -> None:
        self._stage(("obj_write", obj, start_block, bytes(data)))

    def obj_set_layout(self, obj: ObjectId, layout: Layout) -> None:
        self._stage(("obj_set_layout", obj, layout_to_dict(layout)))

    def idx_create(self, index_id: str) -> None:
        self._stage(("idx_create", index_id))

    def idx_put(self, index_id: str, records) -> None:
        items = list(records.items()) if isinstance(records, dict) else list(records)
        self._stage(("idx_put", index_id, items))

    def idx_del(self, index_id: str, keys) -> None:
        self._stage(("idx_del", index_id, list(keys)))

    def commit(self) -> None:
        self._engine.commit(self)

    def abort(self) -> None:
        self._engine.abort(self)


class TxnEngine:
    def __init__(self, log: RedoLog, apply_op: Callable[[Op, bool], None],
                 addb: Optional[AddbStore] = None):
        self.log = log
        self._apply_op = apply_op
        self.addb = addb
        self._next_id = 1
        self.hook: Optional[Callable[[str], None]] = None

    def begin(self) -> Txn:
        txn = Txn(self, self._next_id)
        self._next_id += 1
        return txn

    def _hook(self, point: str) -> None:
        if self.hook:
            self.hook(point)

    def commit(self, txn: Txn) -> None:
        if txn.state != "open":
            raise InvalidState(f"txn {txn.txn_id} is {txn.state}")
        for op in txn.ops:
            self.log.append(pickle.dumps((txn.txn_id, op), protocol=4))
        self.log.append(pickle.dumps((txn.txn_id, COMMIT), protocol=4))
        # The txn is now durable; apply its effects.
        txn.apply_cost = 0.0
        for op in txn.ops:
            self._hook("apply_op")
            txn.apply_cost += self._apply_op(op, False) or 0.0
        txn.state = "committed"
        if self.addb:
            self.addb.emit("txn", "commit", len(txn.ops), tags={"txn": str(txn.txn_id)})

    def abort(self, txn: Txn) -> None:
        if txn.state != "open":
            raise InvalidState(f"txn {txn.txn_id} is {txn.state}")
        txn.state = "aborted"
        if self.addb:
            self.addb.emit("txn", "abort", len(txn.ops), tags={"txn": str(txn.txn_id)})

    def observe_recovered(self, max_txn_id: int) -> None:
        self._next_id = max(self._next_id, max_txn_id + 1)


class Stack:
    """Engines of one metadata domain sharing a clock, pool and redo log."""

    def __init__(self, pool: DevicePool, log_path: str,
                 clock: Optional[VirtualClock] = None,
                 addb: Optional[AddbStore] = None):
        self.pool = pool
        self.log_path = log_path
        self.clock = clock or VirtualClock()
        self.addb = addb
        self.indices = IndexRegistry()
        self.objects = ObjectStore(pool, self.indices, self.clock, addb)
        self.containers = ContainerRegistry()
        self.log = RedoLog(log_path)
        self.txns = TxnEngine(self.log, self._apply_op, addb)
        self.recover()

    # -- crash hook -----------------------------------------------------------

    def set_crash_hook(self, hook: Optional[Callable[[str], None]]) -> None:
        self.log.hook = hook
        self.txns.hook = hook

    # -- op application (normal commit path and replay share this) ------------

    def _apply_op(self, op: Op, replay: bool) -> float:
        kind = op[0]
        if kind == "obj_create":
            _, obj, block_size, layout_d = op
            self.objects.create(obj, BlockSpec(block_size), layout_from_dict(layout_d),
                                replay=replay)
        elif kind == "obj_delete":
            self.objects.delete(op[1], replay=replay)
        elif kind == "obj_write":
            _, obj, start_block, data = op
            try:
                return self.objects.write(obj, start_block, data, replay=replay)
            except UnknownObject:
                if not replay:
                    raise
        elif kind == "obj_set_layout":
            _, obj, layout_d = op
            try:
                self.objects.set_layout(obj, layout_from_dict(layout_d), replay=replay)
            except UnknownObject:
                if not replay:
                    raise
        elif kind == "idx_create":
            self.indices.create(op[1], exist_ok=replay)
        elif kind == "idx_put":
            _, index_id, items = op
            if replay:
                self.indices.create(index_id, exist_ok=True)
            self.indices.get(index_id).put(items)
        elif kind == "idx_del":
            _, index_id, keys = op
            if replay:
                self.indices.create(index_id, exist_ok=True)
            self.indices.get(index_id).delete(keys)
        else:
            raise InvalidState(f"unknown op kind {kind!r}")
        return 0.0

    # -- transactions ----------------------------------------------------------

    def begin(self) -> Txn:
        return self.txns.begin()

    def _autocommit(self, *ops: Op) -> None:
        txn = self.begin()
        for op in ops:
            txn._stage(op)
        txn.commit()

    # Durable (logged) operations. Single-op convenience wrappers commit a
    # one-op transaction each.

    def obj_create(self, obj: ObjectId, spec: BlockSpec, layout: Layout) -> None:
        # Validate eagerly so callers see errors before anything is logged.
        if self.objects.exists(obj) or obj in self.objects._tombstones:
            from .errors import AlreadyExists
            raise AlreadyExists(f"object {obj} exists or is retired")
        from .core import layout_devices
        from .errors import InvalidLayout
        for dev_id in layout_devices(layout):
            if self.pool.get(dev_id).block_size != spec.block_size:
                raise InvalidLayout(f"device {dev_id} block size mismatch")
        self._autocommit(("obj_create", obj, spec.block_size, layout_to_dict(layout)))

    def obj_delete(self, obj: ObjectId) -> None:
        self.objects.meta(obj)  # raise UnknownObject before logging
        self._autocommit(("obj_delete", obj))

    def obj_set_layout(self, obj: ObjectId, layout: Layout) -> None:
        self.objects.meta(obj)
        self._autocommit(("obj_set_layout", obj, layout_to_dict(layout)))

    def obj_write(self, obj: ObjectId, start_block: int, data: bytes) -> None:
        """Crash-durable object write (logged through a one-op txn)."""
        self.objects.meta(obj)
        self._autocommit(("obj_write", obj, start_block, bytes(data)))

    def idx_create(self, index_id: str) -> None:
        if self.indices.exists(index_id):
            from .errors import AlreadyExists
            raise AlreadyExists(f"index {index_id!r} exists")
        self._autocommit(("idx_create", index_id))

    def idx_put(self, index_id: str, records) -> None:
        self.indices.get(index_id)
        items = list(records.items()) if isinstance(records, dict) else list(records)
        self._autocommit(("idx_put", index_id, items))

    def idx_del(self, index_id: str, keys) -> list[bool]:
        idx = self.indices.get(index_id)
        acks = [idx.get([k])[0] is not None for k in keys]
        self._autocommit(("idx_del", index_id, list(keys)))
        return acks

    # Reads and unlogged write-through.

    def idx_get(self, index_id: str, keys) -> list:
        return self.indices.get(index_id).get(list(keys))

    def idx_next(self, index_id: str, keys, count: int):
        return self.indices.get(index_id).next(list(keys), count)

    def obj_read(self, obj: ObjectId, start_block: int, block_count: int) -> tuple[bytes, float]:
        return self.objects.read(obj, start_block, block_count)

    def obj_write_direct(self, obj: ObjectId, start_block: int, data: bytes) -> float:
        """Write-through without logging: visible immediately, not
        guaranteed to survive a crash (storage windows use this between
        syncs)."""
        return self.objects.write(obj, start_block, data)

    # -- recovery ----------------------------------------------------------------

    def recover(self) -> None:
        """Rebuild volatile state by replaying committed txns from the log."""
        self.objects.reset_volatile()
        self.indices._indices.clear()
        self.indices.create(SYSTEM_OBJECTS_INDEX, exist_ok=True)
        ops_by_txn: dict[int, list[Op]] = {}
        committed: set[int] = set()
        for payload in self.log.records():
            txn_id, op = pickle.loads(payload)
            if op == COMMIT:
                committed.add(txn_id)
            else:
                ops_by_txn.setdefault(txn_id, []).append(op)
        for txn_id in sorted(committed):
            for op in ops_by_txn.get(txn_id, []):
                self._apply_op(op, True)
        if committed or ops_by_txn:
            self.txns.observe_recovered(max(set(ops_by_txn) | committed))

    def crash(self) -> None:
        """Simulate a node crash + restart: volatile state is lost, device
        backing files and the log survive, recovery replays the log."""
        self.set_crash_hook(None)
        self.log.close()
        self.pool.reopen_all()
        self.log = RedoLog(self.log_path)
        self.txns = TxnEngine(self.log, self._apply_op, self.addb)
        self.recover()

    def close(self) -> None:
        self.log.close()
        self.pool.close_all()
