import pytest

from strata.clock import VirtualClock
from strata.errors import CorruptExport, DuplicatePlugin
from strata.telemetry import AddbStore, load_tsv


def make_store():
    clock = VirtualClock()
    return clock, AddbStore(clock, node="n0")


def test_emit_then_query():
    clock, store = make_store()
    store.emit("txn", "commit", 3)
    clock.advance(1.0)
    store.emit("object", "write", 8, tags={"obj": "1"})
    recs = store.query(subsystems=["object"])
    assert len(recs) == 1
    assert recs[0].metric == "write" and recs[0].tag("obj") == "1"
    assert store.query() == store.all_records()


def test_records_strictly_ordered_within_node():
    _, store = make_store()
    for i in range(10):
        store.emit("txn", "commit", i)
    seqs = [r.seq for r in store.all_records()]
    assert seqs == sorted(seqs) and len(set(seqs)) == 10


def test_query_half_open_time_range():
    clock, store = make_store()
    for t in (0.0, 1.0, 2.0):
        clock.now = t
        store.emit("txn", "commit", t)
    got = [r.t for r in store.query(t0=1.0, t1=2.0)]
    assert got == [1.0]  # t0 inclusive, t1 exclusive


def test_query_matches_full_scan_oracle():
    clock, store = make_store()
    for i in range(50):
        clock.now = i * 0.1
        store.emit(("txn", "object", "hsm")[i % 3], f"m{i % 4}", i)
    want = [r for r in store.all_records()
            if r.subsystem in ("object", "hsm") and 1.0 <= r.t < 3.0]
    assert store.query(subsystems=["object", "hsm"], t0=1.0, t1=3.0) == want


def test_unknown_subsystem_rejected():
    _, store = make_store()
    with pytest.raises(ValueError):
        store.emit("bogus", "m", 1)


def test_fdmi_dispatch_and_filtering():
    _, store = make_store()
    seen = []
    store.fdmi_register("p1", seen.append, subsystems=["object"],
                        metric_prefix="write")
    store.emit("object", "write", 1)
    store.emit("object", "read", 1)      # wrong metric
    store.emit("txn", "write_thing", 1)  # wrong subsystem
    store.emit("object", "write_block", 2)  # prefix match
    assert [r.metric for r in seen] == ["write", "write_block"]


def test_duplicate_plugin_and_deregister():
    _, store = make_store()
    seen = []
    store.fdmi_register("p1", seen.append)
    with pytest.raises(DuplicatePlugin):
        store.fdmi_register("p1", seen.append)
    store.fdmi_deregister("p1")
    store.emit("txn", "commit", 1)
    assert seen == []


def test_tsv_export_import_roundtrip(tmp_path):
    clock, store = make_store()
    store.emit("object", "write", 4, tags={"obj": "9", "start": "0"})
    clock.advance(0.5)
    store.emit("net", "rpc", 1536.5, tags={"src": "a", "dst": "b"})
    path = tmp_path / "addb.tsv"
    store.export_tsv(str(path))
    back = load_tsv(str(path))
    assert len(back) == 2
    assert back[0].subsystem == "object" and back[0].value == 4
    assert back[0].tag("obj") == "9"
    assert back[1].t == 0.5 and back[1].value == 1536.5


def test_corrupt_export_rejected(tmp_path):
    path = tmp_path / "addb.tsv"
    path.write_text("0\tn0\tobject\twrite\n")  # five fields only
    with pytest.raises(CorruptExport):
        load_tsv(str(path))
    path.write_text("0\tn0\tnotasubsystem\tm\t1\t\n")
    with pytest.raises(CorruptExport):
        load_tsv(str(path))
    path.write_text("zero\tn0\tobject\tm\t1\t\n")
    with pytest.raises(CorruptExport):
        load_tsv(str(path))
