import pytest
from hypothesis import given, strategies as st

from geobft import wire
from geobft.messages import (
    ExecEntryFull,
    ExecEntryHash,
    ExecuteMsg,
    Request,
    SendMsg,
)

REQ = Request(c=3, t_c=7, kind=0, op=b"PUT k v", target_group="E0", s_min=0, sig=b"s")


def test_roundtrip_request():
    data = wire.encode(REQ)
    assert wire.decode(data) == REQ


def test_encoding_deterministic():
    assert wire.encode(REQ) == wire.encode(REQ)


def test_two_encoders_byte_identical():
    # two replicas building the same ExecuteMsg independently
    def build():
        return ExecuteMsg(
            s=5,
            entries=[
                ExecEntryFull(request=Request(1, 2, 0, b"op", "E1", 0, b"")),
                ExecEntryHash(c=2, t_c=9, op_hash=b"\x00" * 32),
            ],
        )

    assert wire.encode(build()) == wire.encode(build())


def test_truncated_buffer_rejected():
    data = wire.encode(REQ)
    with pytest.raises(wire.MalformedError):
        wire.decode(data[:-1])


def test_empty_buffer_rejected():
    with pytest.raises(wire.MalformedError):
        wire.decode(b"")


def test_trailing_bytes_rejected():
    with pytest.raises(wire.MalformedError):
        wire.decode(wire.encode(REQ) + b"\x00")


def test_flipped_length_field_rejected():
    data = bytearray(wire.encode(SendMsg("ch", 0, 1, b"payload", "A0")))
    # find the payload length byte and inflate it past the buffer end
    idx = data.index(b"payload") - 1
    data[idx] = 0x7F
    with pytest.raises(wire.MalformedError):
        wire.decode(bytes(data))


def test_unknown_tag_rejected():
    with pytest.raises(wire.MalformedError):
        wire.decode(bytes([0x10, 0xFE]))


def test_negative_int_unencodable():
    with pytest.raises(ValueError):
        wire.encode(-1)


scalars = st.one_of(
    st.integers(min_value=0, max_value=2**64),
    st.binary(max_size=64),
    st.text(max_size=32),
    st.booleans(),
    st.none(),
)
values = st.recursive(scalars, lambda inner: st.lists(inner, max_size=4), max_leaves=20)


@given(values)
def test_roundtrip_property(v):
    assert wire.decode(wire.encode(v)) == v


@given(
    st.integers(min_value=0, max_value=1000),
    st.integers(min_value=0, max_value=1000),
    st.binary(max_size=200),
)
def test_roundtrip_generated_messages(c, t_c, op):
    m = Request(c=c, t_c=t_c, kind=1, op=op, target_group="E2", s_min=0, sig=b"")
    assert wire.decode(wire.encode(m)) == m


@given(st.binary(max_size=40))
def test_fuzz_decode_never_crashes(data):
    try:
        wire.decode(data)
    except wire.MalformedError:
        pass


def test_pretty_is_one_line():
    s = wire.pretty(REQ)
    assert "\n" not in s and "Request" in s
