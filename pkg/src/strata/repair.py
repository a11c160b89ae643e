"""Failure event history, repair decisions, and parity rebuild execution.

The decision rule: K or more io_error/timeout events for one device inside
the sliding window, or any crash/offline event, declares the device failed.
A declared failure becomes a device rebuild when a same-tier spare exists,
a re-replication otherwise, and a permanent-loss report when the affected
layouts cannot reconstruct the data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import DATA, Extent, Mirrored, Striped, Tiered, layout_devices, substitute_device
from .errors import UnrecoverableLoss
from .stack import Stack

TRANSIENT_KINDS = ("io_error", "timeout")
FATAL_KINDS = ("crash", "offline")


@dataclass(frozen=True, order=True)
class FailureEvent:
    t: float
    source: str  # device, node or service id
    kind: str
    seq: int = 0


@dataclass
class EventHistory:
    horizon: float = 60.0  # virtual seconds
    events: list[FailureEvent] = field(default_factory=list)

    def ingest(self, event: FailureEvent) -> None:
        if event in self.events:
            return  # duplicates (same t/source/kind/seq) collapse
        self.events.append(event)
        self.events.sort()
        self.prune(event.t)

    def prune(self, now: float) -> None:
        cutoff = now - self.horizon
        self.events = [e for e in self.events if e.t >= cutoff]

    def for_source(self, source: str) -> list[FailureEvent]:
        return [e for e in self.events if e.source == source]


@dataclass(frozen=True)
class Thresholds:
    k_events: int = 3
    window: float = 60.0


@dataclass(frozen=True)
class RepairProcedure:
    kind: str  # none | rebuild_device | re_replicate | mark_permanent_loss
    target: Optional[str] = None
    spare: Optional[str] = None
    objects: tuple[int, ...] = ()


def decide(history: EventHistory, thresholds: Thresholds,
           spares_by_tier: dict[int, list[str]],
           device_tier: dict[str, int],
           already_handled: frozenset[str] = frozenset()) -> RepairProcedure:
    """Pure decision function: history + thresholds -> procedure.

    At most one procedure is active per target; sources already being
    repaired are skipped.
    """
    declared: list[str] = []
    sources = sorted({e.source for e in history.events})
    for src in sources:
        if src in already_handled:
            continue
        evs = history.for_source(src)
        if any(e.kind in FATAL_KINDS for e in evs):
            declared.append(src)
            continue
        transient = [e for e in evs if e.kind in TRANSIENT_KINDS]
        if len(transient) >= thresholds.k_events:
            declared.append(src)
    if not declared:
        return RepairProcedure("none")
    target = declared[0]
    tier = device_tier.get(target)
    if tier is not None and spares_by_tier.get(tier):
        return RepairProcedure("rebuild_device", target=target,
                               spare=spares_by_tier[tier][0])
    return RepairProcedure("re_replicate", target=target)


class HaMonitor:
    """Single decision loop consuming failure events."""

    def __init__(self, stack: Stack, thresholds: Optional[Thresholds] = None):
        self.stack = stack
        self.thresholds = thresholds or Thresholds()
        self.history = EventHistory(horizon=(thresholds or Thresholds()).window)
        self._seq = 0
        self._handled: set[str] = set()

    def ingest(self, source: str, kind: str, t: float) -> FailureEvent:
        ev = FailureEvent(t, source, kind, self._seq)
        self._seq += 1
        self.history.ingest(ev)
        if self.stack.addb is not None:
            self.stack.addb.emit("ha", "failure_event", 1,
                                 tags={"source": source, "kind": kind})
        return ev

    def decide(self) -> RepairProcedure:
        pool = self.stack.pool
        spares = {t: [d.device_id for d in pool.spares(t)] for t in (1, 2, 3, 4)}
        tiers = {d.device_id: d.tier for d in pool.all()}
        return decide(self.history, self.thresholds, spares, tiers,
                      frozenset(self._handled))

    def tick(self) -> Optional[RepairProcedure]:
        """Decide and, if a procedure is warranted, execute it."""
        proc = self.decide()
        if proc.kind == "none":
            return None
        self._handled.add(proc.target)
        result = execute_repair(self.stack, proc)
        if self.stack.addb is not None:
            self.stack.addb.emit("ha", "repair", 1,
                                 tags={"kind": result.kind, "target": str(proc.target)})
        return result


def _affected_objects(stack: Stack, device_id: str) -> list[int]:
    out = []
    for obj in stack.objects.ids():
        if device_id in layout_devices(stack.objects.meta(obj).layout):
            out.append(obj)
    return out


def execute_repair(stack: Stack, proc: RepairProcedure) -> RepairProcedure:
    """Run a rebuild/re-replication; returns the executed (or downgraded)
    procedure. Lost units are reconstructed from surviving group members and
    layouts are repointed transactionally per object."""
    if proc.kind == "none":
        return proc
    if proc.kind == "mark_permanent_loss":
        return proc

    target = proc.target
    pool = stack.pool
    failed_dev = pool.get(target)
    if not failed_dev.failed:
        failed_dev.fail()

    spare_id = proc.spare
    if proc.kind == "rebuild_device":
        if spare_id is None:
            spares = pool.spares(failed_dev.tier)
            if not spares:
                return execute_repair(stack, RepairProcedure("re_replicate", target=target))
            spare_id = spares[0].device_id
        pool.get(spare_id).spare = False

    affected = _affected_objects(stack, target)
    lost: list[int] = []
    for obj in affected:
        meta = stack.objects.meta(obj)
        try:
            # Degraded read of the full object exercises reconstruction; if
            # parity cannot cover the loss this raises UnrecoverableLoss.
            if meta.size_blocks:
                data, _ = stack.obj_read(obj, 0, meta.size_blocks)
            else:
                data = b""
        except UnrecoverableLoss:
            lost.append(obj)
            continue
        if proc.kind == "rebuild_device":
            new_layout = substitute_device(meta.layout, target, spare_id)
        else:
            # re-replicate: drop the failed device by re-homing on survivors
            new_layout = _shrink_layout(stack, meta.layout, target)
        txn = stack.begin()
        txn.obj_set_layout(obj, new_layout)
        if data:
            txn.obj_write(obj, 0, data)
        txn.commit()

    if lost:
        return RepairProcedure("mark_permanent_loss", target=target,
                               objects=tuple(sorted(lost)))
    return RepairProcedure(proc.kind, target=target, spare=spare_id,
                           objects=tuple(affected))


def _shrink_layout(stack: Stack, layout, failed_id: str):
    """Re-replication fallback: place data on surviving same-tier devices."""
    tier = stack.pool.get(failed_id).tier
    survivors = [d.device_id for d in stack.pool.by_tier(tier)
                 if not d.failed and d.device_id != failed_id]
    if isinstance(layout, Tiered):
        return Tiered(_shrink_layout(stack, layout.base, failed_id),
                      tuple((e, _shrink_layout(stack, s, failed_id)) for e, s in layout.parts))
    if failed_id not in layout.devices:
        return layout
    if isinstance(layout, Mirrored):
        remaining = tuple(d for d in layout.devices if d != failed_id)
        return Mirrored(remaining) if remaining else Mirrored(tuple(survivors[:1]))
    # striped: swap the failed device for any survivor not already a member
    candidates = [d for d in survivors if d not in layout.devices]
    if not candidates:
        raise UnrecoverableLoss(f"no replacement device on tier {tier}")
    return substitute_device(layout, failed_id, candidates[0])
