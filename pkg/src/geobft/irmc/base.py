"""Inter-regional message channel: shared endpoint machinery.

A channel forwards messages from a group of senders in one region to a group
of receivers in another.  It is split into independent FIFO subchannels with
position indices and window-based flow control; a message is delivered only
once f_s+1 distinct senders submitted identical content for the same
(subchannel, position).

Concrete transports (receiver-side collection, sender-side collection) extend
SenderEndpoint/ReceiverEndpoint in rc.py and sc.py.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import crypto, wire
from ..crypto import sha256
from ..messages import AuthedMsg, DirectSig, MerkleProof, MoveMsg


class UsageError(Exception):
    """Caller misuse: conflicting local send for an occupied slot."""


class SendWindowError(Exception):
    """Position outside the sender's current window; wait for window movement."""


@dataclass(frozen=True)
class TooOld:
    """Receive-side signal: the position was garbage-collected; catch up."""
    start: int


def default_signing_digest(channel_id: str):
    prefix = b"send|" + channel_id.encode() + b"|"

    def digest(sc: int, pos: int, payload: bytes) -> bytes:
        return sha256(prefix + b"%d|%d|" % (sc, pos) + payload)

    return digest


@dataclass
class ChannelConfig:
    channel_id: str
    senders: list
    receivers: list
    f_s: int
    f_r: int
    capacity: int
    initial_start: int = 1
    signing_digest: object = None  # (sc, pos, payload) -> bytes; shared-signature hook
    batching: bool = False
    batch_window: float = 1.0
    max_batch: int = crypto.MAX_BATCH
    retransmit_interval: float = 200.0
    progress_period: float = 10.0   # SC only
    watchdog_timeout: float = 400.0  # SC only

    def __post_init__(self):
        if len(self.senders) < self.f_s + 1:
            raise ValueError("need at least f_s+1 senders")
        if len(self.receivers) < self.f_r + 1:
            raise ValueError("need at least f_r+1 receivers")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.signing_digest is None:
            self.signing_digest = default_signing_digest(self.channel_id)

    def initial_collector(self, receiver: str) -> str:
        idx = self.receivers.index(receiver)
        return self.senders[idx % len(self.senders)]


class SigningContext:
    """Per-replica signer that memoizes signatures by digest.

    Commit channels to different groups sign the same content digest; the memo
    is what makes that one signature computation instead of one per channel.
    """

    def __init__(self, key: crypto.KeyPair, counters: crypto.OpCounters,
                 memo_size: int = 256):
        self.key = key
        self.counters = counters
        self._memo: dict[bytes, bytes] = {}
        self._memo_size = memo_size

    def sign_digest(self, digest: bytes) -> bytes:
        sig = self._memo.get(digest)
        if sig is None:
            sig = crypto.sign(self.key, digest, self.counters)
            if len(self._memo) >= self._memo_size:
                self._memo.pop(next(iter(self._memo)))
            self._memo[digest] = sig
        return sig


class Endpoint:
    """State and helpers common to both endpoint sides."""

    def __init__(self, cfg: ChannelConfig, owner: str, signer: SigningContext,
                 pubs: dict, counters: crypto.OpCounters, sim, send_raw):
        self.cfg = cfg
        self.owner = owner
        self.signer = signer
        self.pubs = pubs
        self.counters = counters
        self.sim = sim
        self.send_raw = send_raw  # (dst node id, message object) -> None
        self.sig_cache = crypto.RootSigCache(cfg.capacity * 4)
        self.incidents: list[str] = []

    # -- auth helpers -----------------------------------------------------

    def _move_digest(self, m: MoveMsg) -> bytes:
        return sha256(b"move|%s|%d|%d|%s|%s" % (
            m.channel.encode(), m.sc, m.pos, m.collector.encode(), m.signer.encode()))

    def send_authed(self, dst: str, body_msg, digest: bytes) -> None:
        sig = self.signer.sign_digest(digest)
        self.send_raw(dst, AuthedMsg(body=wire.encode(body_msg), auth=DirectSig(sig=sig)))

    def verify_auth(self, signer_id: str, digest: bytes, auth) -> bool:
        pub = self.pubs.get(signer_id)
        if pub is None:
            return False
        if isinstance(auth, DirectSig):
            return crypto.verify(pub, digest, auth.sig, self.counters)
        if isinstance(auth, MerkleProof):
            return crypto.merkle_verify(pub, digest, auth, self.counters, self.sig_cache)
        return False


@dataclass
class _SenderSub:
    start: int
    own_req: int
    recv_reqs: dict
    slots: dict = field(default_factory=dict)  # pos -> (payload, last_tx_time)


class SenderEndpoint(Endpoint):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._subs: dict[int, _SenderSub] = {}
        self._retx_active = False
        # test hook: (dst, sc, pos, payload) -> payload, for scripted equivocation
        self.payload_hook = None

    def _sub(self, sc: int) -> _SenderSub:
        sub = self._subs.get(sc)
        if sub is None:
            init = self.cfg.initial_start
            sub = _SenderSub(start=init, own_req=init,
                             recv_reqs={r: init for r in self.cfg.receivers})
            self._subs[sc] = sub
        return sub

    def window(self, sc: int) -> tuple[int, int]:
        sub = self._sub(sc)
        return sub.start, sub.start + self.cfg.capacity - 1

    def can_send(self, sc: int, pos: int) -> bool:
        lo, hi = self.window(sc)
        return lo <= pos <= hi

    def send(self, sc: int, pos: int, payload: bytes) -> None:
        sub = self._sub(sc)
        lo, hi = self.window(sc)
        if not lo <= pos <= hi:
            raise SendWindowError(f"position {pos} outside window [{lo}, {hi}]")
        existing = sub.slots.get(pos)
        if existing is not None and existing[0] != payload:
            raise UsageError(f"conflicting send at (sc={sc}, pos={pos})")
        sub.slots[pos] = (payload, self.sim.now)
        self._transmit(sc, pos, payload)
        self._ensure_retransmit()

    def move_window(self, sc: int, new_start: int) -> None:
        sub = self._sub(sc)
        if new_start <= sub.own_req:
            return  # retrograde or duplicate requests are ignored
        sub.own_req = new_start
        self._broadcast_move(sc, new_start)
        self._recompute(sc)

    def _broadcast_move(self, sc: int, pos: int) -> None:
        m = MoveMsg(channel=self.cfg.channel_id, sc=sc, pos=pos, collector="",
                    signer=self.owner)
        digest = self._move_digest(m)
        for r in self.cfg.receivers:
            self.send_authed(r, m, digest)

    def on_move(self, m: MoveMsg) -> None:
        if m.signer not in self.cfg.receivers:
            return
        sub = self._sub(m.sc)
        if m.pos > sub.recv_reqs.get(m.signer, self.cfg.initial_start):
            sub.recv_reqs[m.signer] = m.pos
            self._recompute(m.sc)
        if m.collector:
            self._on_collector_choice(m.signer, m.collector)

    def _on_collector_choice(self, receiver: str, collector: str) -> None:
        pass  # SC hook

    def _recompute(self, sc: int) -> None:
        sub = self._sub(sc)
        granted = sorted(sub.recv_reqs.values(), reverse=True)[self.cfg.f_r]
        eff = max(sub.start, sub.own_req, granted)
        if eff > sub.start:
            sub.start = eff
            for pos in [p for p in sub.slots if p < eff]:
                del sub.slots[pos]
            self._on_window_advance(sc, eff)

    def _on_window_advance(self, sc: int, start: int) -> None:
        pass  # variant GC hook

    # -- retransmission ---------------------------------------------------

    def _ensure_retransmit(self) -> None:
        if not self._retx_active:
            self._retx_active = True
            self.sim.after(self.cfg.retransmit_interval, self._retransmit_tick)

    def _retransmit_tick(self) -> None:
        self._retx_active = False
        have_work = False
        for sc, sub in self._subs.items():
            # re-announce the effective window start so receivers that missed
            # the original move messages (e.g. after a crash) learn that old
            # positions are gone and can start state transfer
            if sub.start > self.cfg.initial_start:
                self._broadcast_move(sc, sub.start)
            for pos in sorted(sub.slots):
                payload, last_tx = sub.slots[pos]
                if self.sim.now - last_tx >= self.cfg.retransmit_interval:
                    sub.slots[pos] = (payload, self.sim.now)
                    self._transmit(sc, pos, payload)
                have_work = True
        if have_work:
            self._ensure_retransmit()

    def _transmit(self, sc: int, pos: int, payload: bytes) -> None:
        raise NotImplementedError

    def on_channel_message(self, msg, auth) -> None:
        if isinstance(msg, MoveMsg):
            if self.verify_auth(msg.signer, self._move_digest(msg), auth):
                self.on_move(msg)


@dataclass
class _ReceiverSub:
    start: int
    own_req: int
    sender_reqs: dict
    delivered: dict = field(default_factory=dict)  # pos -> payload
    waiters: dict = field(default_factory=dict)    # pos -> [callback]
    contiguous: int = 0


class ReceiverEndpoint(Endpoint):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._subs: dict[int, _ReceiverSub] = {}
        # instrumentation for the no-fabrication property test
        self.delivery_log: list = []  # (sc, pos, payload)

    def _sub(self, sc: int) -> _ReceiverSub:
        sub = self._subs.get(sc)
        if sub is None:
            init = self.cfg.initial_start
            sub = _ReceiverSub(start=init, own_req=init,
                               sender_reqs={s: init for s in self.cfg.senders},
                               contiguous=init - 1)
            self._subs[sc] = sub
        return sub

    def window_start(self, sc: int) -> int:
        return self._sub(sc).start

    def in_window(self, sc: int, pos: int) -> bool:
        sub = self._sub(sc)
        return sub.start <= pos < sub.start + self.cfg.capacity

    def receive(self, sc: int, pos: int, callback) -> None:
        """Deliver the payload for (sc, pos) to callback, or TooOld(start).

        The callback fires synchronously if the slot is already decided,
        otherwise when evidence completes or the window moves past pos.
        """
        sub = self._sub(sc)
        if pos in sub.delivered:
            callback(sub.delivered[pos])
        elif pos < sub.start:
            callback(TooOld(sub.start))
        else:
            sub.waiters.setdefault(pos, []).append(callback)
            self._on_waiter_added(sc, pos)

    def _on_waiter_added(self, sc: int, pos: int) -> None:
        pass  # SC watchdog hook

    def move_window(self, sc: int, new_start: int) -> None:
        sub = self._sub(sc)
        if new_start <= sub.own_req:
            return
        sub.own_req = new_start
        self._broadcast_move(sc, new_start)
        self._recompute(sc)

    def _broadcast_move(self, sc: int, pos: int) -> None:
        m = MoveMsg(channel=self.cfg.channel_id, sc=sc, pos=pos,
                    collector=self._collector_announcement(), signer=self.owner)
        digest = self._move_digest(m)
        for s in self.cfg.senders:
            self.send_authed(s, m, digest)

    def _collector_announcement(self) -> str:
        return ""

    def on_move(self, m: MoveMsg) -> None:
        if m.signer not in self.cfg.senders:
            return
        sub = self._sub(m.sc)
        if m.pos > sub.sender_reqs.get(m.signer, self.cfg.initial_start):
            sub.sender_reqs[m.signer] = m.pos
            self._recompute(m.sc)

    def _recompute(self, sc: int) -> None:
        sub = self._sub(sc)
        requested = sorted(sub.sender_reqs.values(), reverse=True)[self.cfg.f_s]
        eff = max(sub.start, sub.own_req, requested)
        if eff > sub.start:
            sub.start = eff
            sub.contiguous = max(sub.contiguous, eff - 1)
            for pos in [p for p in sub.delivered if p < eff]:
                del sub.delivered[pos]
            self._gc_evidence(sc, eff)
            too_old = TooOld(eff)
            for pos in [p for p in sub.waiters if p < eff]:
                for cb in sub.waiters.pop(pos):
                    cb(too_old)

    def _gc_evidence(self, sc: int, start: int) -> None:
        pass  # variant hook

    def _deliver(self, sc: int, pos: int, payload: bytes) -> None:
        sub = self._sub(sc)
        if pos < sub.start or pos in sub.delivered:
            return
        sub.delivered[pos] = payload
        while (sub.contiguous + 1) in sub.delivered:
            sub.contiguous += 1
        self.delivery_log.append((sc, pos, payload))
        for cb in sub.waiters.pop(pos, []):
            cb(payload)

    def delivered_map(self) -> dict:
        """(sc, pos) -> payload for everything this endpoint ever delivered."""
        return {(sc, pos): payload for sc, pos, payload in self.delivery_log}

    def pending_waits(self):
        for sc, sub in self._subs.items():
            for pos in sorted(sub.waiters):
                yield f"{self.cfg.channel_id}.receive(sc={sc}, pos={pos})"

    def on_channel_message(self, msg, auth) -> None:
        raise NotImplementedError
