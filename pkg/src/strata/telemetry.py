"""ADDB-style telemetry records and FDMI-style plugin dispatch.

Records accumulate in memory during a run and export as line-delimited TSV
(`addb.tsv`): one record per line, tab-separated t, node, subsystem, metric,
value, tags. Plugins subscribe with a subsystem/metric filter and receive
matching records at emit time (at-least-once, never mutating).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .clock import VirtualClock
from .errors import CorruptExport, DuplicatePlugin

SUBSYSTEMS = ("object", "index", "txn", "hsm", "ship", "ha", "window", "stream", "net")


@dataclass(frozen=True)
class AddbRecord:
    t: float
    node: str
    subsystem: str
    metric: str
    value: float
    tags: tuple[tuple[str, str], ...] = ()
    seq: int = 0

    def tag(self, key: str, default: Optional[str] = None) -> Optional[str]:
        for k, v in self.tags:
            if k == key:
                return v
        return default


@dataclass
class FdmiSubscription:
    plugin_id: str
    subsystems: Optional[frozenset[str]]  # None = all
    metric_prefix: str
    callback: Callable[[AddbRecord], None]

    def matches(self, rec: AddbRecord) -> bool:
        if self.subsystems is not None and rec.subsystem not in self.subsystems:
            return False
        return rec.metric.startswith(self.metric_prefix)


def _format_value(v: float) -> str:
    # Integral values print without a fractional part so exports stay stable
    # and readable; everything else uses repr (shortest round-trip form).
    if float(v).is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(float(v))


class AddbStore:
    def __init__(self, clock: VirtualClock, node: str = "local"):
        self.clock = clock
        self.default_node = node
        self._records: list[AddbRecord] = []
        self._seq = 0
        self._subs: dict[str, FdmiSubscription] = {}

    def emit(self, subsystem: str, metric: str, value: float,
             node: Optional[str] = None, tags: Optional[dict[str, str]] = None) -> AddbRecord:
        if subsystem not in SUBSYSTEMS:
            raise ValueError(f"unknown subsystem {subsystem!r}")
        rec = AddbRecord(
            t=self.clock.now,
            node=node or self.default_node,
            subsystem=subsystem,
            metric=metric,
            value=float(value),
            tags=tuple(sorted((tags or {}).items())),
            seq=self._seq,
        )
        self._seq += 1
        self._records.append(rec)
        for sub in self._subs.values():
            if sub.matches(rec):
                sub.callback(rec)
        return rec

    def query(self, subsystems: Optional[Iterable[str]] = None,
              metric: Optional[str] = None,
              t0: Optional[float] = None, t1: Optional[float] = None,
              node: Optional[str] = None) -> list[AddbRecord]:
        """All records matching the filter, in emit order. The time range is
        half-open: t0 <= t < t1."""
        subs = frozenset(subsystems) if subsystems is not None else None
        out = []
        for r in self._records:
            if subs is not None and r.subsystem not in subs:
                continue
            if metric is not None and r.metric != metric:
                continue
            if t0 is not None and r.t < t0:
                continue
            if t1 is not None and r.t >= t1:
                continue
            if node is not None and r.node != node:
                continue
            out.append(r)
        return out

    def all_records(self) -> list[AddbRecord]:
        return list(self._records)

    # -- FDMI --------------------------------------------------------------

    def fdmi_register(self, plugin_id: str, callback: Callable[[AddbRecord], None],
                      subsystems: Optional[Iterable[str]] = None,
                      metric_prefix: str = "") -> str:
        if plugin_id in self._subs:
            raise DuplicatePlugin(plugin_id)
        self._subs[plugin_id] = FdmiSubscription(
            plugin_id,
            frozenset(subsystems) if subsystems is not None else None,
            metric_prefix,
            callback,
        )
        return plugin_id

    def fdmi_deregister(self, plugin_id: str) -> None:
        self._subs.pop(plugin_id, None)

    # -- export / import ----------------------------------------------------

    def export_tsv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self._records:
                tags = ",".join(f"{k}={v}" for k, v in r.tags)
                fh.write(f"{_format_value(r.t)}\t{r.node}\t{r.subsystem}\t"
                         f"{r.metric}\t{_format_value(r.value)}\t{tags}\n")


def load_tsv(path: str) -> list[AddbRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise CorruptExport(f"{path}:{i + 1}: expected 6 fields")
            t, node, subsystem, metric, value, tags = parts
            if subsystem not in SUBSYSTEMS:
                raise CorruptExport(f"{path}:{i + 1}: unknown subsystem {subsystem!r}")
            try:
                tag_pairs = tuple(
                    tuple(kv.split("=", 1)) for kv in tags.split(",") if kv
                )
                records.append(AddbRecord(float(t), node, subsystem, metric,
                                          float(value), tag_pairs, seq=i))
            except ValueError as e:
                raise CorruptExport(f"{path}:{i + 1}: {e}") from None
    return records
