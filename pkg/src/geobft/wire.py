"""Canonical binary encoding for all protocol messages.

Every message is a registered dataclass; encoding is a pure function of the
logical field values, so independently produced encodings of the same message
are byte-identical.  That property is load-bearing: matching-content delivery
quorums and shared signatures both compare/sign raw encodings.

Format: one type byte per value, then a fixed per-type layout.  Integers are
unsigned varints, byte strings and containers are length-prefixed, registered
dataclasses are a tag byte followed by their fields in declaration order.
"""

from __future__ import annotations

import dataclasses

_T_INT = 0x01
_T_BYTES = 0x02
_T_STR = 0x03
_T_LIST = 0x04
_T_TUPLE = 0x05
_T_NONE = 0x06
_T_TRUE = 0x07
_T_FALSE = 0x08
_T_MSG = 0x10  # tag byte follows


class MalformedError(Exception):
    """Raised when a buffer is not a valid canonical encoding."""


_registry: dict[int, type] = {}
_tags: dict[type, int] = {}


def message(tag: int):
    """Class decorator registering a dataclass under a wire tag."""

    def wrap(cls):
        cls = dataclasses.dataclass(frozen=True)(cls)
        if tag in _registry:
            raise ValueError(f"duplicate wire tag {tag}")
        if not 0 <= tag <= 0xFF:
            raise ValueError(f"wire tag out of range: {tag}")
        _registry[tag] = cls
        _tags[cls] = tag
        cls.__wire_fields__ = tuple(f.name for f in dataclasses.fields(cls))
        return cls

    return wrap


def _write_varint(out: bytearray, n: int) -> None:
    if n < 0:
        raise ValueError("negative integers are not encodable")
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def _encode_value(out: bytearray, v) -> None:
    if v is None:
        out.append(_T_NONE)
    elif v is True:
        out.append(_T_TRUE)
    elif v is False:
        out.append(_T_FALSE)
    elif isinstance(v, int):
        out.append(_T_INT)
        _write_varint(out, v)
    elif isinstance(v, (bytes, bytearray)):
        out.append(_T_BYTES)
        _write_varint(out, len(v))
        out += v
    elif isinstance(v, str):
        raw = v.encode("utf-8")
        out.append(_T_STR)
        _write_varint(out, len(raw))
        out += raw
    elif isinstance(v, list):
        out.append(_T_LIST)
        _write_varint(out, len(v))
        for item in v:
            _encode_value(out, item)
    elif isinstance(v, tuple):
        out.append(_T_TUPLE)
        _write_varint(out, len(v))
        for item in v:
            _encode_value(out, item)
    elif type(v) in _tags:
        out.append(_T_MSG)
        out.append(_tags[type(v)])
        for name in v.__wire_fields__:
            _encode_value(out, getattr(v, name))
    else:
        raise TypeError(f"unencodable value of type {type(v).__name__}")


def encode(msg) -> bytes:
    """Encode a registered message (or plain value) to canonical bytes."""
    out = bytearray()
    _encode_value(out, msg)
    return bytes(out)


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def byte(self) -> int:
        if self.pos >= len(self.data):
            raise MalformedError("truncated buffer")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedError("truncated buffer")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def varint(self) -> int:
        shift = 0
        n = 0
        while True:
            b = self.byte()
            n |= (b & 0x7F) << shift
            if not b & 0x80:
                return n
            shift += 7
            if shift > 63:
                raise MalformedError("varint too long")


def _decode_value(r: _Reader):
    t = r.byte()
    if t == _T_NONE:
        return None
    if t == _T_TRUE:
        return True
    if t == _T_FALSE:
        return False
    if t == _T_INT:
        return r.varint()
    if t == _T_BYTES:
        return r.take(r.varint())
    if t == _T_STR:
        raw = r.take(r.varint())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedError("invalid utf-8") from e
    if t == _T_LIST:
        return [_decode_value(r) for _ in range(r.varint())]
    if t == _T_TUPLE:
        return tuple(_decode_value(r) for _ in range(r.varint()))
    if t == _T_MSG:
        tag = r.byte()
        cls = _registry.get(tag)
        if cls is None:
            raise MalformedError(f"unknown message tag {tag}")
        values = [_decode_value(r) for _ in cls.__wire_fields__]
        try:
            return cls(*values)
        except (TypeError, ValueError) as e:
            raise MalformedError(str(e)) from e
    raise MalformedError(f"unknown type byte {t}")


def decode(data: bytes):
    """Inverse of encode; rejects anything that is not a full valid encoding."""
    r = _Reader(data)
    v = _decode_value(r)
    if r.pos != len(data):
        raise MalformedError("trailing bytes")
    return v


def pretty(msg) -> str:
    """One-line textual rendering for trace logs."""
    if type(msg) in _tags:
        fields = ", ".join(
            f"{name}={_short(getattr(msg, name))}" for name in msg.__wire_fields__
        )
        return f"{type(msg).__name__}({fields})"
    return _short(msg)


def _short(v) -> str:
    if isinstance(v, (bytes, bytearray)):
        h = bytes(v[:8]).hex()
        return f"0x{h}…" if len(v) > 8 else f"0x{h}"
    if isinstance(v, list):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    if isinstance(v, tuple):
        return "(" + ", ".join(_short(x) for x in v) + ")"
    if type(v) in _tags:
        return pretty(v)
    return repr(v)
