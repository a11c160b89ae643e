import random

import pytest

from strata.core import BlockSpec, Striped
from strata.repair import (
    EventHistory,
    FailureEvent,
    HaMonitor,
    Thresholds,
    decide,
    execute_repair,
    RepairProcedure,
)

from conftest import BLOCK

SPEC = [("d0", 1, 256), ("d1", 1, 256), ("d2", 1, 256),
        ("sp", 1, 256, True), ("e0", 2, 256), ("e1", 2, 256)]


def history_with(events):
    h = EventHistory()
    for i, (t, src, kind) in enumerate(events):
        h.ingest(FailureEvent(t, src, kind, i))
    return h


SPARES = {1: ["sp"]}
TIERS = {"d0": 1, "d1": 1, "d2": 1, "sp": 1, "e0": 2, "e1": 2}


def test_below_threshold_is_no_action():
    h = history_with([(1.0, "d0", "io_error"), (2.0, "d0", "timeout")])
    assert decide(h, Thresholds(), SPARES, TIERS).kind == "none"


def test_k_transient_events_declare_failure():
    h = history_with([(1.0, "d0", "io_error"), (2.0, "d0", "timeout"),
                      (3.0, "d0", "io_error")])
    proc = decide(h, Thresholds(), SPARES, TIERS)
    assert proc.kind == "rebuild_device"
    assert proc.target == "d0" and proc.spare == "sp"


def test_events_outside_window_do_not_count():
    h = history_with([(1.0, "d0", "io_error"), (2.0, "d0", "io_error"),
                      (100.0, "d0", "io_error")])
    # the first two fell out of the 60 s sliding window at t=100
    assert decide(h, Thresholds(), SPARES, TIERS).kind == "none"


def test_fatal_event_is_immediate():
    h = history_with([(5.0, "d1", "crash")])
    proc = decide(h, Thresholds(), SPARES, TIERS)
    assert proc.kind == "rebuild_device" and proc.target == "d1"


def test_no_spare_falls_back_to_re_replicate():
    h = history_with([(5.0, "e0", "offline")])
    proc = decide(h, Thresholds(), SPARES, TIERS)
    assert proc.kind == "re_replicate" and proc.target == "e0"


def test_duplicate_events_collapse():
    h = EventHistory()
    ev = FailureEvent(1.0, "d0", "io_error", 0)
    h.ingest(ev)
    h.ingest(ev)
    h.ingest(FailureEvent(2.0, "d0", "io_error", 1))
    assert decide(h, Thresholds(), SPARES, TIERS).kind == "none"


def test_already_handled_sources_are_skipped():
    h = history_with([(5.0, "d0", "crash")])
    proc = decide(h, Thresholds(), SPARES, TIERS,
                  already_handled=frozenset({"d0"}))
    assert proc.kind == "none"


def test_rebuild_restores_bit_exact_data(make_stack):
    stack = make_stack(spec=SPEC)
    lay = Striped(2, 1, ("d0", "d1", "d2"))
    rng = random.Random(9)
    payloads = {}
    for oid in (1, 2, 3):
        stack.obj_create(oid, BlockSpec(BLOCK), lay)
        payloads[oid] = rng.randbytes(6 * BLOCK)
        stack.obj_write(oid, 0, payloads[oid])

    monitor = HaMonitor(stack)
    for t in (1.0, 2.0, 3.0):
        monitor.ingest("d1", "io_error", t)
    result = monitor.tick()
    assert result.kind == "rebuild_device" and result.spare == "sp"
    assert not stack.pool.get("sp").spare  # consumed

    for oid, want in payloads.items():
        assert stack.obj_read(oid, 0, 6)[0] == want
        assert "d1" not in str(stack.objects.meta(oid).layout.devices)
    # survives recovery (layout change and rewrite were transactional)
    stack.crash()
    for oid, want in payloads.items():
        assert stack.obj_read(oid, 0, 6)[0] == want


def test_re_replicate_on_tier_without_spare(make_stack):
    stack = make_stack(spec=SPEC + [("e2", 2, 256)])
    lay = Striped(1, 0, ("e0",))
    stack.obj_create(1, BlockSpec(BLOCK), lay)
    data = b"\x3c" * 4 * BLOCK
    stack.obj_write(1, 0, data)

    # single-device layout cannot reconstruct: this is a permanent loss
    proc = execute_repair(stack, RepairProcedure("re_replicate", target="e0"))
    assert proc.kind == "mark_permanent_loss"
    assert proc.objects == (1,)


def test_re_replicate_mirrored_drops_failed_replica(make_stack):
    stack = make_stack(spec=SPEC)
    from strata.core import Mirrored
    stack.obj_create(1, BlockSpec(BLOCK), Mirrored(("e0", "e1")))
    data = b"\x5a" * 2 * BLOCK
    stack.obj_write(1, 0, data)
    proc = execute_repair(stack, RepairProcedure("re_replicate", target="e0"))
    assert proc.kind == "re_replicate"
    meta = stack.objects.meta(1)
    assert meta.layout == Mirrored(("e1",))
    assert stack.obj_read(1, 0, 2)[0] == data


def test_permanent_loss_reports_objects(make_stack):
    stack = make_stack(spec=SPEC)
    lay = Striped(2, 1, ("d0", "d1", "d2"))
    stack.obj_create(1, BlockSpec(BLOCK), lay)
    stack.obj_write(1, 0, b"\x01" * 4 * BLOCK)
    stack.pool.get("d0").fail()
    proc = execute_repair(stack, RepairProcedure("rebuild_device",
                                                 target="d1", spare="sp"))
    assert proc.kind == "mark_permanent_loss"
    assert proc.objects == (1,)


def test_monitor_emits_telemetry(make_stack):
    stack = make_stack(spec=SPEC, with_addb=True)
    monitor = HaMonitor(stack)
    monitor.ingest("d0", "crash", 1.0)
    monitor.tick()
    kinds = [r.metric for r in stack.addb.query(subsystems=["ha"])]
    assert "failure_event" in kinds and "repair" in kinds
