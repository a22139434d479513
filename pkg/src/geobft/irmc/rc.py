"""Receiver-side-collection channel variant.

Every sender signs and ships its SEND to every receiver; each receiver
independently collects f_s+1 byte-identical submissions per slot.  Simple and
CPU-cheap on the sender side at the cost of n_senders * n_receivers wide-area
messages per slot.

Signature batching, when enabled, assembles the content digests of one
transmission round into a Merkle tree and signs only the root.
"""

from __future__ import annotations

from .. import crypto, wire
from ..messages import AuthedMsg, DirectSig, MoveMsg, SendMsg
from .base import ReceiverEndpoint, SenderEndpoint


class RcSenderEndpoint(SenderEndpoint):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._batch: list = []  # (digest, encoded SendMsg body, [dsts])
        self._batch_timer_set = False

    def _transmit(self, sc: int, pos: int, payload: bytes) -> None:
        if self.payload_hook is not None:
            for dst in self.cfg.receivers:
                p = self.payload_hook(dst, sc, pos, payload)
                if p is None:
                    continue
                msg = SendMsg(self.cfg.channel_id, sc, pos, p, self.owner)
                self.send_authed(dst, msg, self.cfg.signing_digest(sc, pos, p))
            return
        msg = SendMsg(self.cfg.channel_id, sc, pos, payload, self.owner)
        digest = self.cfg.signing_digest(sc, pos, payload)
        if not self.cfg.batching:
            sig = self.signer.sign_digest(digest)
            authed = AuthedMsg(body=wire.encode(msg), auth=DirectSig(sig=sig))
            for dst in self.cfg.receivers:
                self.send_raw(dst, authed)
        else:
            self._batch.append((digest, wire.encode(msg)))
            if len(self._batch) >= self.cfg.max_batch:
                self._flush_batch()
            elif not self._batch_timer_set:
                self._batch_timer_set = True
                self.sim.after(self.cfg.batch_window, self._flush_batch)

    def _flush_batch(self) -> None:
        self._batch_timer_set = False
        if not self._batch:
            return
        batch, self._batch = self._batch, []
        digests = [d for d, _ in batch]
        proofs = crypto.merkle_sign_batch(self.signer.key, digests, self.counters,
                                          max_batch=self.cfg.max_batch)
        for (_, body), proof in zip(batch, proofs):
            authed = AuthedMsg(body=body, auth=proof)
            for dst in self.cfg.receivers:
                self.send_raw(dst, authed)


class RcReceiverEndpoint(ReceiverEndpoint):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # (sc, pos) -> payload -> {signer: encoded AuthedMsg}
        self._evidence: dict = {}
        # (sc, pos) -> list of encoded AuthedMsgs proving delivery (forwarding)
        self.proof_store: dict = {}

    def on_channel_message(self, msg, auth) -> None:
        if isinstance(msg, MoveMsg):
            if self.verify_auth(msg.signer, self._move_digest(msg), auth):
                self.on_move(msg)
        elif isinstance(msg, SendMsg):
            self._on_send(msg, auth)

    def _on_send(self, msg: SendMsg, auth) -> None:
        if msg.signer not in self.cfg.senders:
            return
        sub = self._sub(msg.sc)
        if msg.pos < sub.start or msg.pos >= sub.start + self.cfg.capacity:
            return
        if msg.pos in sub.delivered:
            return
        digest = self.cfg.signing_digest(msg.sc, msg.pos, msg.payload)
        if not self.verify_auth(msg.signer, digest, auth):
            return  # discarded silently
        slot = self._evidence.setdefault((msg.sc, msg.pos), {})
        by_signer = slot.setdefault(msg.payload, {})
        by_signer[msg.signer] = wire.encode(AuthedMsg(body=wire.encode(msg), auth=auth))
        if len(by_signer) >= self.cfg.f_s + 1:
            self.proof_store[(msg.sc, msg.pos)] = list(by_signer.values())[: self.cfg.f_s + 1]
            self._evidence.pop((msg.sc, msg.pos), None)
            self._deliver(msg.sc, msg.pos, msg.payload)

    def ingest_forwarded(self, items: list) -> None:
        """Feed forwarded SEND evidence through normal verification."""
        for item in items:
            try:
                authed = wire.decode(item)
                inner = wire.decode(authed.body)
            except wire.MalformedError:
                continue
            if isinstance(authed, AuthedMsg) and isinstance(inner, SendMsg):
                self._on_send(inner, authed.auth)

    def export_evidence(self, sc: int, pos: int):
        return self.proof_store.get((sc, pos))

    def _gc_evidence(self, sc: int, start: int) -> None:
        for key in [k for k in self._evidence if k[0] == sc and k[1] < start]:
            del self._evidence[key]
        for key in [k for k in self.proof_store if k[0] == sc and k[1] < start]:
            del self.proof_store[key]
