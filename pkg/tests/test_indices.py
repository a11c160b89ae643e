import bisect

import pytest
from hypothesis import given, settings, strategies as st

from strata.errors import AlreadyExists, UnknownIndex
from strata.indices import Index, IndexRegistry


def test_put_get_delete_basics():
    idx = Index("t")
    idx.put([(b"k1", b"v1"), (b"k2", b"v2")])
    assert idx.get([b"k1", b"k2", b"nope"]) == [b"v1", b"v2", None]
    idx.put({b"k1": b"v1b"})  # overwrite
    assert idx.get([b"k1"]) == [b"v1b"]
    assert idx.delete([b"k1", b"missing"]) == [True, False]
    assert idx.get([b"k1"]) == [None]
    assert len(idx) == 1


def test_empty_value_is_not_absence():
    idx = Index("t")
    idx.put([(b"k", b"")])
    assert idx.get([b"k"]) == [b""]
    assert idx.get([b"other"]) == [None]


def test_keys_must_be_nonempty_bytes():
    idx = Index("t")
    with pytest.raises(ValueError):
        idx.put([(b"", b"v")])
    with pytest.raises(ValueError):
        idx.put([("str", b"v")])


def test_next_is_strict_successor():
    idx = Index("t")
    idx.put([(b"a", b"1"), (b"c", b"3"), (b"e", b"5")])
    # probe key present: not returned
    assert idx.next([b"a"], 2) == [[(b"c", b"3"), (b"e", b"5")]]
    # probe key absent: scan starts at the successor anyway
    assert idx.next([b"b"], 1) == [[(b"c", b"3")]]
    assert idx.next([b"e"], 3) == [[]]
    with pytest.raises(ValueError):
        idx.next([b"a"], 0)


@settings(max_examples=60)
@given(st.lists(st.tuples(
    st.sampled_from(["put", "get", "del", "next"]),
    st.binary(min_size=1, max_size=6),
    st.binary(max_size=6)), max_size=80))
def test_random_ops_match_dict_oracle(ops):
    idx = Index("t")
    oracle: dict[bytes, bytes] = {}
    for op, key, value in ops:
        if op == "put":
            idx.put([(key, value)])
            oracle[key] = value
        elif op == "get":
            assert idx.get([key]) == [oracle.get(key)]
        elif op == "del":
            assert idx.delete([key]) == [key in oracle]
            oracle.pop(key, None)
        else:
            keys = sorted(oracle)
            i = bisect.bisect_right(keys, key)
            want = [(k, oracle[k]) for k in keys[i:i + 3]]
            assert idx.next([key], 3) == [want]
    assert idx.items() == sorted(oracle.items())


def test_page_dump_load_roundtrip():
    idx = Index("t")
    idx.put([(b"b", b"2"), (b"a", b"1"), (b"c", b"")])
    blob = idx.dump_pages()
    assert blob[:8] == b"SAGEIDX1"
    again = Index.load_pages("t2", blob)
    assert again.items() == idx.items()


def test_registry():
    reg = IndexRegistry()
    reg.create("one")
    with pytest.raises(AlreadyExists):
        reg.create("one")
    assert reg.create("one", exist_ok=True) is reg.get("one")
    with pytest.raises(UnknownIndex):
        reg.get("two")
    reg.create("two")
    assert reg.ids() == ["one", "two"]
