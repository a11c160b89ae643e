"""Command-line driver: cluster lifecycle, the benchmark workloads, and
reports recomputed from telemetry exports.

    strata-bench init   --config cluster.json [--seed N]
    strata-bench run    [--config cluster.json] [--seed N]
                        --workload {stream,dht,checkpoint,offload,all}
                        [--out DIR]
    strata-bench report [--out DIR]

Exit status is 0 only when every workload verification passed.
"""
from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from .. import config as configmod
from ..cluster import Cluster
from ..errors import StorageError
from .report import RunReport, report_from_tsv
from .workloads import run_checkpoint, run_dht, run_offload, run_stream

WORKLOADS = ("stream", "dht", "checkpoint", "offload")

OFFLOAD_SCALES = (16, 64, 256, 1024)


def _run_one(name: str, cfg: dict, out: Path) -> RunReport:
    params = cfg.get("workloads", {}).get(name, {})
    workdir = out / f"work_{name}"
    cluster = Cluster(cfg, str(workdir))
    try:
        if name == "stream":
            metrics = run_stream(cluster, **params)
        elif name == "dht":
            metrics = run_dht(cluster, **params)
        elif name == "checkpoint":
            metrics = run_checkpoint(cluster, **params)
        else:
            scales = params.pop("scales", OFFLOAD_SCALES)
            runs = [run_offload(cluster, sim_ranks=s, **params) for s in scales]
            metrics = {
                "scales": list(scales),
                "improvement": {str(r["sim_ranks"]): r["improvement"] for r in runs},
                "offload_time": {str(r["sim_ranks"]): r["offload_time"] for r in runs},
                "baseline_time": {str(r["sim_ranks"]): r["baseline_time"] for r in runs},
                "verified": all(r["verified"] for r in runs),
            }
        cluster.addb.export_tsv(str(out / f"addb_{name}.tsv"))
    finally:
        cluster.close()
    env = {"nodes": len(cfg["nodes"]), "network": cfg["network"]}
    return RunReport(name, cfg["seed"], metrics, env)


def cmd_init(args) -> int:
    cfg = configmod.default_config(seed=args.seed or 0)
    configmod.save(cfg, args.config)
    print(f"wrote {args.config}")
    return 0


def cmd_run(args) -> int:
    if args.config:
        cfg = configmod.load(args.config)
    else:
        cfg = configmod.default_config()
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.out or tempfile.mkdtemp(prefix="strata-bench-"))
    out.mkdir(parents=True, exist_ok=True)

    names = WORKLOADS if args.workload == "all" else (args.workload,)
    reports = []
    for name in names:
        try:
            rep = _run_one(name, cfg, out)
        except StorageError as e:
            print(f"workload {name} failed: {e}", file=sys.stderr)
            return 1
        print(rep.to_table())
        print()
        reports.append(rep)

    results = {r.workload: r.to_dict() for r in reports}
    (out / "results.json").write_text(json.dumps(results, indent=2,
                                                 default=str) + "\n")
    print(f"results written to {out}")
    return 0 if all(r.verified for r in reports) else 1


def cmd_report(args) -> int:
    out = Path(args.out or ".")
    exports = sorted(out.glob("addb_*.tsv")) or [out / "addb.tsv"]
    ok = True
    for path in exports:
        if not path.exists():
            print(f"no telemetry export at {path}", file=sys.stderr)
            return 1
        try:
            rep = report_from_tsv(path)
        except StorageError as e:
            print(f"{path}: {e}", file=sys.stderr)
            ok = False
            continue
        print(f"== {path.name}")
        print(rep.to_table())
        rep.save(path.with_suffix(".report.json"))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="strata-bench",
        description="Simulated tiered-storage benchmarks and reports.")
    sub = p.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="write a default cluster config")
    p_init.add_argument("--config", default="cluster.json")
    p_init.add_argument("--seed", type=int, default=None)
    p_init.set_defaults(fn=cmd_init)

    p_run = sub.add_parser("run", help="run one workload (or all)")
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workload", required=True,
                       choices=WORKLOADS + ("all",))
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(fn=cmd_run)

    p_rep = sub.add_parser("report", help="recompute aggregates from addb exports")
    p_rep.add_argument("--out", default=".")
    p_rep.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
