import random

from hypothesis import given, settings, strategies as st

from geobft import kvapp


def test_get_absent_key():
    kv = kvapp.KvStore()
    result, s_update = kv.execute(kvapp.get_op(b"k"), 5)
    assert kvapp.decode_result(result) == (kvapp.RES_ABSENT, b"")
    assert s_update == 0


def test_put_then_get_tracks_update_seqnr():
    kv = kvapp.KvStore()
    kv.execute(kvapp.put_op(b"k", b"v"), 7)
    result, s_update = kv.execute(kvapp.get_op(b"k"), 9)
    assert kvapp.decode_result(result) == (kvapp.RES_VALUE, b"v")
    assert s_update == 7


def test_delete_leaves_tombstone_with_advancing_seqnr():
    kv = kvapp.KvStore()
    kv.execute(kvapp.put_op(b"k", b"v"), 3)
    kv.execute(kvapp.delete_op(b"k"), 8)
    result, s_update = kv.execute(kvapp.get_op(b"k"), 9)
    assert kvapp.decode_result(result)[0] == kvapp.RES_ABSENT
    assert s_update == 8


def test_malformed_op_deterministic_error():
    kv = kvapp.KvStore()
    r1 = kv.execute(b"\xff\xff", 1)
    r2 = kv.execute(b"\xff\xff", 2)
    assert r1 == r2
    assert kvapp.decode_result(r1[0])[0] == kvapp.RES_ERROR


def test_is_read_only():
    assert kvapp.is_read_only(kvapp.get_op(b"k"))
    assert not kvapp.is_read_only(kvapp.put_op(b"k", b"v"))
    assert not kvapp.is_read_only(kvapp.delete_op(b"k"))
    assert not kvapp.is_read_only(b"\xff")


def test_snapshot_roundtrip():
    kv = kvapp.KvStore()
    kv.execute(kvapp.put_op(b"a", b"1"), 1)
    kv.execute(kvapp.delete_op(b"b"), 2)
    snap = kv.snapshot()
    kv2 = kvapp.KvStore()
    kv2.apply(snap)
    assert kv2.state == kv.state
    assert kv2.snapshot() == snap


def test_empty_snapshot_canonical():
    assert kvapp.KvStore().snapshot() == kvapp.KvStore().snapshot()


def test_apply_malformed_raises():
    kv = kvapp.KvStore()
    try:
        kv.apply(b"\x00garbage")
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**31))
def test_determinism_random_op_sequences(seed):
    rng = random.Random(seed)
    ops = []
    keys = [b"k%d" % i for i in range(4)]
    for s in range(1, 30):
        k = rng.choice(keys)
        kind = rng.randrange(3)
        if kind == 0:
            ops.append(kvapp.put_op(k, rng.randbytes(4)))
        elif kind == 1:
            ops.append(kvapp.get_op(k))
        else:
            ops.append(kvapp.delete_op(k))
    a, b = kvapp.KvStore(), kvapp.KvStore()
    for s, op in enumerate(ops, start=1):
        ra = a.execute(op, s)
        rb = b.execute(op, s)
        assert ra == rb
    assert a.snapshot() == b.snapshot()
