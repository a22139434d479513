"""Sender-side-collection channel variant.

Senders exchange signed hashes of their SENDs inside the sender region; one
sender per receiver (the receiver's chosen collector) ships a certificate with
f_s+1 matching signatures across the wide-area link.  Periodic Progress
messages let receivers detect a withholding collector and rotate to the next
sender.
"""

from __future__ import annotations

from .. import crypto, wire
from ..crypto import sha256
from ..messages import (
    AuthedMsg,
    CertificateMsg,
    MoveMsg,
    ProgressMsg,
    ShareMsg,
)
from .base import ReceiverEndpoint, SenderEndpoint


def _cert_digest(cert: CertificateMsg) -> bytes:
    return sha256(b"cert|" + wire.encode(
        (cert.channel, cert.sc, cert.pos, cert.payload, cert.vouchers, cert.signer)))


def _progress_digest(p: ProgressMsg) -> bytes:
    return sha256(b"prog|" + wire.encode((p.channel, p.positions, p.signer)))


class ScSenderEndpoint(SenderEndpoint):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # (sc, pos) -> {signer: (digest, sig)}
        self._shares: dict = {}
        # (sc, pos) -> CertificateMsg
        self._certs: dict = {}
        self._cert_high: dict[int, int] = {}  # sc -> highest contiguous certified pos
        self._subscribers: set[str] = {
            r for r in self.cfg.receivers if self.cfg.initial_collector(r) == self.owner
        }
        self._progress_active = False
        self._cert_batch: list = []
        self._cert_batch_timer = False
        # test hooks for scripted faults: equivocating shares, withheld certs
        self.share_hook = None
        self.cert_hook = None  # (dst, cert) -> cert or None to withhold

    def _transmit(self, sc: int, pos: int, payload: bytes) -> None:
        digest = self.cfg.signing_digest(sc, pos, payload)
        sig = self.signer.sign_digest(digest)
        slot = self._shares.setdefault((sc, pos), {})
        slot.setdefault(self.owner, (digest, sig))
        for peer in self.cfg.senders:
            if peer == self.owner:
                continue
            d = digest
            if self.share_hook is not None:
                d = self.share_hook(peer, sc, pos, digest)
                if d is None:
                    continue
            share = ShareMsg(self.cfg.channel_id, sc, pos, d, self.owner,
                             sig if d == digest else self.signer.sign_digest(d))
            self.send_raw(peer, share)
        cert = self._certs.get((sc, pos))
        if cert is not None:  # retransmission of an already-certified slot
            for dst in sorted(self._subscribers):
                self._push_cert(dst, cert)
        else:
            self._try_assemble(sc, pos)
        self._ensure_progress()

    def on_share(self, share: ShareMsg) -> None:
        if share.signer not in self.cfg.senders or share.signer == self.owner:
            return
        sub = self._sub(share.sc)
        if share.pos < sub.start or share.pos >= sub.start + self.cfg.capacity:
            return
        pub = self.pubs.get(share.signer)
        if pub is None or not crypto.verify(pub, share.digest, share.sig, self.counters):
            return
        slot = self._shares.setdefault((share.sc, share.pos), {})
        prev = slot.get(share.signer)
        if prev is not None:
            if prev[0] != share.digest:
                self.incidents.append(
                    f"conflicting share from {share.signer} at "
                    f"({share.sc}, {share.pos})")
            return
        slot[share.signer] = (share.digest, share.sig)
        self._try_assemble(share.sc, share.pos)

    def _try_assemble(self, sc: int, pos: int) -> None:
        if (sc, pos) in self._certs:
            return
        sub = self._sub(sc)
        local = sub.slots.get(pos)
        if local is None:
            return
        payload = local[0]
        digest = self.cfg.signing_digest(sc, pos, payload)
        slot = self._shares.get((sc, pos), {})
        matching = sorted(s for s, (d, _) in slot.items() if d == digest)
        if len(matching) < self.cfg.f_s + 1:
            return
        vouchers = [(s, slot[s][1]) for s in matching[: self.cfg.f_s + 1]]
        cert = CertificateMsg(self.cfg.channel_id, sc, pos, payload, vouchers, self.owner)
        self._certs[(sc, pos)] = cert
        high = self._cert_high.get(sc, self.cfg.initial_start - 1)
        self._cert_high[sc] = max(high, pos)
        for dst in sorted(self._subscribers):
            self._push_cert(dst, cert)

    def _push_cert(self, dst: str, cert: CertificateMsg) -> None:
        if self.cert_hook is not None:
            cert = self.cert_hook(dst, cert)
            if cert is None:
                return
        if not self.cfg.batching:
            self.send_authed(dst, cert, _cert_digest(cert))
            return
        self._cert_batch.append((dst, cert))
        if len(self._cert_batch) >= self.cfg.max_batch:
            self._flush_certs()
        elif not self._cert_batch_timer:
            self._cert_batch_timer = True
            self.sim.after(self.cfg.batch_window, self._flush_certs)

    def _flush_certs(self) -> None:
        self._cert_batch_timer = False
        if not self._cert_batch:
            return
        batch, self._cert_batch = self._cert_batch, []
        digests = [_cert_digest(c) for _, c in batch]
        proofs = crypto.merkle_sign_batch(self.signer.key, digests, self.counters,
                                          max_batch=self.cfg.max_batch)
        for (dst, cert), proof in zip(batch, proofs):
            self.send_raw(dst, AuthedMsg(body=wire.encode(cert), auth=proof))

    def _on_collector_choice(self, receiver: str, collector: str) -> None:
        if collector == self.owner and receiver not in self._subscribers:
            self._subscribers.add(receiver)
            # bring a newly attached receiver up to date
            for (sc, pos), cert in sorted(self._certs.items()):
                self._push_cert(receiver, cert)
        elif collector != self.owner:
            self._subscribers.discard(receiver)

    def _on_window_advance(self, sc: int, start: int) -> None:
        for key in [k for k in self._shares if k[0] == sc and k[1] < start]:
            del self._shares[key]
        for key in [k for k in self._certs if k[0] == sc and k[1] < start]:
            del self._certs[key]
        high = self._cert_high.get(sc, self.cfg.initial_start - 1)
        self._cert_high[sc] = max(high, start - 1)

    # -- progress ---------------------------------------------------------

    def _ensure_progress(self) -> None:
        if not self._progress_active:
            self._progress_active = True
            self.sim.after(self.cfg.progress_period, self._progress_tick)

    def _progress_tick(self) -> None:
        self._progress_active = False
        positions = sorted(
            (sc, high) for sc, high in self._cert_high.items()
            if high >= self.cfg.initial_start)
        has_work = any(sub.slots for sub in self._subs.values()) or bool(self._certs)
        if positions and has_work:
            p = ProgressMsg(self.cfg.channel_id, positions, self.owner)
            digest = _progress_digest(p)
            for dst in self.cfg.receivers:
                self.send_authed(dst, p, digest)
        if has_work:
            self._ensure_progress()

    def on_channel_message(self, msg, auth) -> None:
        if isinstance(msg, MoveMsg):
            if self.verify_auth(msg.signer, self._move_digest(msg), auth):
                self.on_move(msg)


class ScReceiverEndpoint(ReceiverEndpoint):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.collector = self.cfg.initial_collector(self.owner)
        self.collector_switches = 0
        # signer -> {sc: highest certified pos claimed}
        self._progress: dict = {}
        self._watchdog_active = False
        self._wait_since: dict = {}  # (sc, pos) -> first wait / last switch time
        # (sc, pos) -> encoded AuthedMsg certificate (for forwarding)
        self.proof_store: dict = {}

    def on_channel_message(self, msg, auth) -> None:
        if isinstance(msg, MoveMsg):
            if self.verify_auth(msg.signer, self._move_digest(msg), auth):
                self.on_move(msg)
        elif isinstance(msg, CertificateMsg):
            self._on_cert(msg, auth)
        elif isinstance(msg, ProgressMsg):
            if msg.signer in self.cfg.senders and self.verify_auth(
                    msg.signer, _progress_digest(msg), auth):
                claims = self._progress.setdefault(msg.signer, {})
                for sc, pos in msg.positions:
                    claims[sc] = max(claims.get(sc, 0), pos)

    def _on_cert(self, cert: CertificateMsg, auth) -> None:
        if cert.signer not in self.cfg.senders:
            return
        sub = self._sub(cert.sc)
        if cert.pos < sub.start or cert.pos >= sub.start + self.cfg.capacity:
            return
        if cert.pos in sub.delivered:
            return
        if not self.verify_auth(cert.signer, _cert_digest(cert), auth):
            return
        digest = self.cfg.signing_digest(cert.sc, cert.pos, cert.payload)
        signers = set()
        for item in cert.vouchers:
            if not (isinstance(item, tuple) and len(item) == 2):
                return
            s, sig = item
            if s not in self.cfg.senders or s in signers:
                return
            pub = self.pubs.get(s)
            if pub is None or not crypto.verify(pub, digest, sig, self.counters):
                return  # any bad inner signature rejects the whole certificate
            signers.add(s)
        if len(signers) < self.cfg.f_s + 1:
            return
        self.proof_store[(cert.sc, cert.pos)] = [
            wire.encode(AuthedMsg(body=wire.encode(cert), auth=auth))]
        self._deliver(cert.sc, cert.pos, cert.payload)
        self._wait_since.pop((cert.sc, cert.pos), None)

    def ingest_forwarded(self, items: list) -> None:
        for item in items:
            try:
                authed = wire.decode(item)
                inner = wire.decode(authed.body)
            except wire.MalformedError:
                continue
            if isinstance(authed, AuthedMsg) and isinstance(inner, CertificateMsg):
                self._on_cert(inner, authed.auth)

    def export_evidence(self, sc: int, pos: int):
        return self.proof_store.get((sc, pos))

    def _gc_evidence(self, sc: int, start: int) -> None:
        for key in [k for k in self.proof_store if k[0] == sc and k[1] < start]:
            del self.proof_store[key]
        for key in [k for k in self._wait_since if k[0] == sc and k[1] < start]:
            del self._wait_since[key]

    def _collector_announcement(self) -> str:
        return self.collector

    # -- collector watchdog ----------------------------------------------

    def _on_waiter_added(self, sc: int, pos: int) -> None:
        self._wait_since.setdefault((sc, pos), self.sim.now)
        if not self._watchdog_active:
            self._watchdog_active = True
            self.sim.after(self.cfg.watchdog_timeout / 2, self._watchdog_tick)

    def _watchdog_tick(self) -> None:
        self._watchdog_active = False
        waiting = [(sc, pos) for sc, sub in self._subs.items() for pos in sub.waiters]
        if not waiting:
            return
        for sc, pos in waiting:
            since = self._wait_since.setdefault((sc, pos), self.sim.now)
            if self.sim.now - since < self.cfg.watchdog_timeout:
                continue
            claimants = sum(
                1 for claims in self._progress.values() if claims.get(sc, 0) >= pos)
            if claimants >= self.cfg.f_s + 1:
                self._switch_collector()
                break
        self._watchdog_active = True
        self.sim.after(self.cfg.watchdog_timeout / 2, self._watchdog_tick)

    def _switch_collector(self) -> None:
        idx = self.cfg.senders.index(self.collector)
        self.collector = self.cfg.senders[(idx + 1) % len(self.cfg.senders)]
        self.collector_switches += 1
        now = self.sim.now
        for key in self._wait_since:
            self._wait_since[key] = now
        # announce the new collector attached to a Move at the current request
        for sc, sub in self._subs.items():
            m = MoveMsg(channel=self.cfg.channel_id, sc=sc, pos=sub.own_req,
                        collector=self.collector, signer=self.owner)
            digest = self._move_digest(m)
            for s in self.cfg.senders:
                self.send_authed(s, m, digest)

    def pending_waits(self):
        yield from super().pending_waits()
