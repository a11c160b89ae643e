"""Benchmark workloads and the command-line driver."""

from .workloads import (
    dht_capacity,
    run_checkpoint,
    run_dht,
    run_offload,
    run_stream,
)
from .report import RunReport, report_from_tsv

__all__ = [
    "RunReport", "dht_capacity", "report_from_tsv", "run_checkpoint",
    "run_dht", "run_offload", "run_stream",
]
