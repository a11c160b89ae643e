"""Hierarchical storage management: per-extent access statistics and
policy-driven migration between tiers.

Statistics are kept per fixed-size extent chunk of an object. Hotness is an
exponentially weighted access rate with a configurable half-life; promotion
jumps straight to tier 1, demotion cascades one tier down at a time.
Migrations copy data and repoint the layout inside a single transaction, so
a crash never leaves an extent torn between tiers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .core import Extent, Mirrored, Striped, Tiered, layout_map
from .errors import TargetFull, UnknownObject
from .stack import Stack

DEFAULT_HALF_LIFE = 100.0  # virtual seconds


@dataclass
class AccessStats:
    read_count: int = 0
    write_count: int = 0
    last_access: float = 0.0
    ewma_rate: float = 0.0  # accesses per virtual second

    def update(self, kind: str, t: float, half_life: float) -> None:
        decay = 0.5 ** ((t - self.last_access) / half_life) if t > self.last_access else 1.0
        self.ewma_rate = self.ewma_rate * decay + 1.0 / half_life
        self.last_access = t
        if kind == "read":
            self.read_count += 1
        else:
            self.write_count += 1

    def rate_at(self, t: float, half_life: float) -> float:
        if t <= self.last_access:
            return self.ewma_rate
        return self.ewma_rate * 0.5 ** ((t - self.last_access) / half_life)


@dataclass(frozen=True)
class HsmPolicy:
    promote_rate_threshold: float = 0.05  # accesses / virtual second
    demote_idle_threshold: float = 300.0  # virtual seconds
    half_life: float = DEFAULT_HALF_LIFE
    chunk_blocks: int = 64  # stats granularity, in blocks
    # fraction of tier capacity: {tier: (low, high)}
    watermarks: dict[int, tuple[float, float]] = field(
        default_factory=lambda: {t: (0.6, 0.85) for t in (1, 2, 3, 4)})

    def __post_init__(self):
        for tier, (lo, hi) in self.watermarks.items():
            if not lo < hi:
                raise ValueError(f"tier {tier}: low watermark must be < high")


@dataclass(frozen=True)
class MigrationAction:
    obj: int
    extent: Extent
    from_tier: int
    to_tier: int

    def __post_init__(self):
        if self.from_tier == self.to_tier:
            raise ValueError("migration must change tier")


class HsmEngine:
    def __init__(self, stack: Stack, policy: Optional[HsmPolicy] = None):
        self.stack = stack
        self.policy = policy or HsmPolicy()
        # (obj, chunk index) -> AccessStats
        self.stats: dict[tuple[int, int], AccessStats] = {}

    # -- statistics -----------------------------------------------------------

    def record_access(self, obj: int, extent: Extent, kind: str, t: float) -> None:
        if not self.stack.objects.exists(obj):
            raise UnknownObject(str(obj))
        cb = self.policy.chunk_blocks
        first = extent.start_block // cb
        last = (extent.end_block - 1) // cb
        for chunk in range(first, last + 1):
            st = self.stats.setdefault((obj, chunk), AccessStats())
            st.update(kind, t, self.policy.half_life)

    def attach_telemetry(self, addb) -> None:
        """Consume object-subsystem access records as an FDMI plugin."""
        def on_record(rec):
            if rec.metric not in ("read", "write"):
                return
            obj = int(rec.tag("obj"))
            if not self.stack.objects.exists(obj):
                return
            start = int(rec.tag("start"))
            count = max(1, int(rec.value))
            self.record_access(obj, Extent(start, count), rec.metric, rec.t)

        addb.fdmi_register("hsm", on_record, subsystems=("object",))

    # -- placement inspection ----------------------------------------------------

    def _chunk_extent(self, obj: int, chunk: int) -> Optional[Extent]:
        meta = self.stack.objects.meta(obj)
        cb = self.policy.chunk_blocks
        start = chunk * cb
        if start >= meta.size_blocks:
            return None
        count = min(cb, meta.size_blocks - start)
        return Extent(start, count)

    def _extent_tier(self, obj: int, extent: Extent) -> int:
        """Highest-numbered (slowest) tier any block of the extent sits on."""
        meta = self.stack.objects.meta(obj)
        tier = 0
        for pl in layout_map(meta.layout, extent):
            tier = max(tier, self.stack.pool.get(pl.device_id).tier)
        return tier

    # -- policy evaluation ---------------------------------------------------------

    def evaluate(self, now: float) -> list[MigrationAction]:
        """Plan promotions and demotions; deterministic, watermark-safe."""
        pol = self.policy
        occupancy = self.stack.objects.tier_occupancy()
        tier_caps = {t: 0 for t in (1, 2, 3, 4)}
        for dev in self.stack.pool.all():
            if not dev.spare:
                tier_caps[dev.tier] += dev.n_blocks

        rows = []
        for (obj, chunk), st in sorted(self.stats.items()):
            if not self.stack.objects.exists(obj):
                continue
            extent = self._chunk_extent(obj, chunk)
            if extent is None:
                continue
            tier = self._extent_tier(obj, extent)
            rows.append((obj, extent, tier, st.rate_at(now, pol.half_life),
                         now - st.last_access))

        # Headroom is measured in blocks below the high watermark, adjusted
        # as the plan fills tiers up.
        headroom = {}
        for t in (1, 2, 3, 4):
            hi = pol.watermarks.get(t, (0.6, 0.85))[1]
            headroom[t] = int(tier_caps[t] * hi) - int(occupancy[t] * tier_caps[t])

        actions: list[MigrationAction] = []
        planned: set[tuple[int, int]] = set()

        promotions = [r for r in rows if r[3] >= pol.promote_rate_threshold and r[2] > 1]
        promotions.sort(key=lambda r: (-r[3], r[0], r[1].start_block))  # hottest first
        for obj, extent, tier, rate, idle in promotions:
            need = extent.block_count
            if headroom[1] < need:
                continue
            headroom[1] -= need
            actions.append(MigrationAction(obj, extent, tier, 1))
            planned.add((obj, extent.start_block))

        demotions = [r for r in rows
                     if r[4] > pol.demote_idle_threshold and r[2] < 4
                     and r[3] < pol.promote_rate_threshold
                     and (r[0], r[1].start_block) not in planned]
        demotions.sort(key=lambda r: (-r[4], r[0], r[1].start_block))  # coldest first
        for obj, extent, tier, rate, idle in demotions:
            target = tier + 1
            need = extent.block_count
            if headroom[target] < need:
                continue
            headroom[target] -= need
            actions.append(MigrationAction(obj, extent, tier, target))
        return actions

    # -- migration --------------------------------------------------------------

    def _target_layout(self, obj: int, extent: Extent, to_tier: int):
        """Pick devices on the target tier mirroring the source stripe shape."""
        meta = self.stack.objects.meta(obj)
        base = meta.layout.base if isinstance(meta.layout, Tiered) else meta.layout
        if isinstance(base, Mirrored):
            want = len(base.devices)
        else:
            want = base.data_units + base.parity_units
        devices = [d for d in self.stack.pool.by_tier(to_tier) if not d.failed]
        if len(devices) < want:
            # fall back to an unstriped single-device placement
            if not devices:
                raise TargetFull(f"no devices on tier {to_tier}")
            want = 1
        chosen = devices[:want]
        need_blocks = extent.block_count
        free = sum(d.n_blocks - self.stack.objects.allocator(d.device_id).allocated
                   for d in chosen)
        if free < need_blocks + (need_blocks // max(1, want)):
            raise TargetFull(f"tier {to_tier} cannot hold {need_blocks} blocks")
        ids = tuple(d.device_id for d in chosen)
        if isinstance(base, Mirrored):
            return Mirrored(ids) if want > 1 else Striped(1, 0, ids)
        if want == 1:
            return Striped(1, 0, ids)
        return Striped(base.data_units, base.parity_units, ids)

    def _align_extent(self, obj: int, extent: Extent) -> Extent:
        """Stripe-align so migration never splits a parity group."""
        meta = self.stack.objects.meta(obj)
        base = meta.layout.base if isinstance(meta.layout, Tiered) else meta.layout
        n = base.data_units if isinstance(base, Striped) else 1
        start = (extent.start_block // n) * n
        end = -(-extent.end_block // n) * n
        return Extent(start, end - start)

    def migrate(self, action: MigrationAction) -> None:
        """Copy the extent to the target tier and repoint the layout, all in
        one transaction; reads before and after return identical bytes."""
        stack = self.stack
        meta = stack.objects.meta(action.obj)
        extent = self._align_extent(action.obj, action.extent)
        extent = Extent(extent.start_block,
                        min(extent.block_count, meta.size_blocks - extent.start_block))
        sub = self._target_layout(action.obj, extent, action.to_tier)
        data, _ = stack.obj_read(action.obj, extent.start_block, extent.block_count)

        old = meta.layout
        if isinstance(old, Tiered):
            parts = [(e, s) for e, s in old.parts if not e.overlaps(extent)]
            base = old.base
        else:
            parts, base = [], old
        parts.append((extent, sub))
        new_layout = Tiered(base, tuple(parts))

        txn = stack.begin()
        txn.obj_set_layout(action.obj, new_layout)
        txn.obj_write(action.obj, extent.start_block, data)
        txn.commit()
        if stack.addb is not None:
            stack.addb.emit("hsm", "migrate", extent.block_count, tags={
                "obj": str(action.obj),
                "from": str(action.from_tier),
                "to": str(action.to_tier),
            })

    def run_pass(self, now: float) -> list[MigrationAction]:
        actions = self.evaluate(now)
        for a in actions:
            self.migrate(a)
        return actions
