"""Deterministic key-value state machine.

Each key tracks the sequence number of its last update so reads can report
which state change influenced them (the s_update half of the client session
bookkeeping).  Deletions keep a tombstone: the key reads as absent but its
last_update still advances, keeping monotonic-read checks well-defined.
"""

from __future__ import annotations

from . import wire

OP_PUT = 0
OP_GET = 1
OP_DELETE = 2

RES_OK = 0
RES_VALUE = 1
RES_ABSENT = 2
RES_ERROR = 3


def put_op(key: bytes, value: bytes) -> bytes:
    return wire.encode((OP_PUT, key, value))


def get_op(key: bytes) -> bytes:
    return wire.encode((OP_GET, key))


def delete_op(key: bytes) -> bytes:
    return wire.encode((OP_DELETE, key))


def decode_result(result: bytes):
    """-> (status, value) with value = b"" unless status is RES_VALUE."""
    status, value = wire.decode(result)
    return status, value


def is_read_only(op: bytes) -> bool:
    try:
        decoded = wire.decode(op)
    except wire.MalformedError:
        return False
    return (isinstance(decoded, tuple) and len(decoded) >= 1
            and decoded[0] == OP_GET)


class KvStore:
    """state: key -> (value | None for tombstones, last_update seq nr)."""

    def __init__(self):
        self.state: dict[bytes, tuple] = {}

    def execute(self, op: bytes, s: int) -> tuple[bytes, int]:
        """-> (result bytes, s_update). Malformed ops yield a deterministic
        error result rather than raising."""
        try:
            decoded = wire.decode(op)
            kind = decoded[0]
            if kind == OP_PUT:
                _, key, value = decoded
                self.state[key] = (value, s)
                return wire.encode((RES_OK, b"")), s
            if kind == OP_DELETE:
                _, key = decoded
                self.state[key] = (None, s)
                return wire.encode((RES_OK, b"")), s
            if kind == OP_GET:
                _, key = decoded
                value, last = self.state.get(key, (None, 0))
                if value is None:
                    return wire.encode((RES_ABSENT, b"")), last
                return wire.encode((RES_VALUE, value)), last
        except (wire.MalformedError, ValueError, TypeError, IndexError):
            pass
        return wire.encode((RES_ERROR, b"malformed")), 0

    def snapshot(self) -> bytes:
        items = [(k, v is not None, v if v is not None else b"", last)
                 for k, (v, last) in sorted(self.state.items())]
        return wire.encode(items)

    def apply(self, data: bytes) -> None:
        try:
            items = wire.decode(data)
            state = {}
            for k, present, v, last in items:
                state[k] = (v if present else None, last)
        except (wire.MalformedError, ValueError, TypeError) as e:
            raise ValueError(f"malformed application snapshot: {e}") from e
        self.state = state
