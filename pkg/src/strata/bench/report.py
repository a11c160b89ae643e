"""Run reports: human tables plus machine-readable JSON, all derived from
telemetry records so every aggregate is recomputable from the addb.tsv
export."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..telemetry import AddbRecord, load_tsv


@dataclass
class RunReport:
    workload: str
    seed: int
    metrics: dict
    environment: dict = field(default_factory=dict)

    @property
    def verified(self) -> bool:
        return bool(self.metrics.get("verified"))

    def to_dict(self) -> dict:
        return {
            "workload": self.workload,
            "seed": self.seed,
            "verified": self.verified,
            "metrics": self.metrics,
            "environment": self.environment,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2,
                                         default=str) + "\n")

    def to_table(self) -> str:
        lines = [f"workload: {self.workload}   seed: {self.seed}   "
                 f"verified: {'yes' if self.verified else 'NO'}"]
        lines.extend(_flatten("", self.metrics))
        return "\n".join(lines)


def _flatten(prefix: str, value) -> list[str]:
    if isinstance(value, dict):
        out = []
        for k in value:
            if k == "verified":
                continue
            out.extend(_flatten(f"{prefix}{k}.", value[k]))
        return out
    if isinstance(value, float):
        return [f"  {prefix[:-1]:<40} {value:.6g}"]
    return [f"  {prefix[:-1]:<40} {value}"]


def aggregate_records(records: list[AddbRecord]) -> dict:
    """Pure aggregation over telemetry records (the report is a function of
    the export and nothing else)."""
    per_subsystem: dict[str, int] = {}
    bytes_per_tier: dict[str, float] = {}
    net_bytes = 0.0
    for r in records:
        per_subsystem[r.subsystem] = per_subsystem.get(r.subsystem, 0) + 1
        if r.subsystem == "object" and r.metric in ("dev_write", "dev_read"):
            tier = r.tag("tier", "?")
            key = f"tier{tier}.{r.metric[4:]}"
            bytes_per_tier[key] = bytes_per_tier.get(key, 0) + r.value
        if r.subsystem == "net" and r.metric == "rpc":
            net_bytes += r.value
    return {
        "records": len(records),
        "t_max": max((r.t for r in records), default=0.0),
        "per_subsystem": dict(sorted(per_subsystem.items())),
        "bytes_per_tier": dict(sorted(bytes_per_tier.items())),
        "net_payload_bytes": net_bytes,
    }


def report_from_tsv(path) -> RunReport:
    records = load_tsv(str(path))
    metrics = aggregate_records(records)
    metrics["verified"] = True
    return RunReport("report", seed=-1, metrics=metrics,
                     environment={"source": str(path)})
