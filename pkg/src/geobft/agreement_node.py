"""Agreement replica: pulls client requests from request channels, gates them
through the transfer-attestation phase, feeds the consensus core, disseminates
Execute messages through commit channels with one shared signature, maintains
agreement checkpoints with pacing/garbage collection, and hosts the
execution-group registry including runtime reconfiguration.
"""

from __future__ import annotations

from . import crypto, wire
from .crypto import sha256
from .irmc.base import ChannelConfig, SendWindowError, SigningContext, TooOld
from .irmc.rc import RcSenderEndpoint
from .irmc.sc import ScSenderEndpoint
from .messages import (
    ADMIN,
    AddGroup,
    AgreementSnapshot,
    CheckpointData,
    CheckpointVote,
    Commit,
    ExecEntryFull,
    ExecEntryHash,
    ExecuteMsg,
    FetchCheckpoint,
    ForwardRequest,
    NewView,
    PrePrepare,
    Prepare,
    RegistryQuery,
    RegistryReply,
    RemoveGroup,
    Reply,
    Request,
    STRONG_READ,
    VerifyMsg,
    ViewChange,
    WRITE,
    WEAK_READ,
)
from .node import NetNode
from .pbft import AgreementConfig, Consensus

CONSENSUS_MSGS = (PrePrepare, Prepare, Commit, ViewChange, NewView, ForwardRequest)

AGREEMENT_CKPT_GROUP = "A"


def request_digest(r: Request) -> bytes:
    """What the client signs; binds everything but the signature itself."""
    return sha256(b"req|" + wire.encode(
        (r.c, r.t_c, r.kind, r.op, r.target_group, r.s_min)))


def entry_descriptor(entry):
    """Normalize an Execute entry to (c, t_c, request hash)."""
    if isinstance(entry, ExecEntryFull):
        r = entry.request
        return (r.c, r.t_c, sha256(wire.encode(r)))
    return (entry.c, entry.t_c, entry.op_hash)


def commit_signing_digest(sc: int, pos: int, payload: bytes) -> bytes:
    """Digest signed for commit-channel slots.

    Computed over the hash-normalized Execute content, so the per-group
    variants of one slot (full request vs hash placeholder) produce the same
    digest and one signature serves every commit channel.
    """
    msg = wire.decode(payload)
    norm = [entry_descriptor(e) for e in msg.entries]
    return sha256(b"exec|" + wire.encode((msg.s, norm)))


def snapshot_digest(snapshot) -> bytes:
    return sha256(b"ckpt|" + wire.encode(snapshot))


def _ckpt_vote_digest(group: str, s: int, digest: bytes, signer: str) -> bytes:
    return sha256(b"ckptvote|" + wire.encode((group, s, digest, signer)))


class AgreementReplica(NetNode):
    def __init__(self, ctx, node_id: str):
        super().__init__(ctx.sim, node_id, ctx.agreement_region, ctx.master,
                         ctx.counters)
        self.ctx = ctx
        self.signer = SigningContext(ctx.keys[node_id], ctx.counters)
        self.peers = [r for r in ctx.agreement_ids if r != node_id]

        cfg = AgreementConfig(f_a=ctx.f_a, batch_limit=ctx.batch_limit,
                              window=ctx.ag_win,
                              request_timeout=ctx.request_timeout)
        self.consensus = Consensus(
            cfg, node_id, ctx.agreement_ids, ctx.sim,
            lambda dst, msg: self.send_msg(dst, msg, tag="consensus"),
            self._on_consensus_ordered, self.signer, ctx.pubs)

        # registry: group id -> (region, [replica ids]); deterministic function
        # of the ordered admin prefix
        self.registry: dict[str, tuple] = {}
        self.commit_senders: dict[str, object] = {}
        self.req_receivers: dict[str, object] = {}

        self.s_n = 0                 # highest slot disseminated (or adopted)
        self.t: dict[int, int] = {}
        self.tplus: dict[int, int] = {}
        self.win_lo, self.win_hi = 1, ctx.ag_win
        self.hist: dict[int, tuple] = {}    # s -> (noop, batch)
        self._ordered: dict[int, tuple] = {}  # committed, not yet disseminated
        self._d_next = 1
        self._pending_sends: dict[str, set] = {}  # group -> blocked slots
        self._driving = False

        # transfer attestation (client-signature verification offloading)
        self._support: dict[tuple, set] = {}   # descriptor -> attesting replicas
        self._req_payloads: dict[tuple, Request] = {}
        self._verify_out: list = []
        self._verify_scheduled = False
        self._eligible: set = set()

        # checkpoints
        self.stable_s = 0
        self._own_ckpts: dict[int, AgreementSnapshot] = {}
        self._ckpt_votes: dict[tuple, dict] = {}  # (s, digest) -> {signer: sig}
        self._fetching = False

        self._fetch_outstanding: dict[tuple, int] = {}  # (group, c) -> pos

        for gid, (region, members) in sorted(ctx.initial_groups.items()):
            self._attach_group(gid, region, members)
        for gid in sorted(self.registry):
            for c in sorted(ctx.clients):
                self._fetch(gid, c)

    # -- group channel plumbing -------------------------------------------

    def _attach_group(self, gid: str, region: str, members: list) -> None:
        ctx = self.ctx
        self.registry[gid] = (region, list(members))
        cmt_id, req_id = f"cmt:{gid}", f"req:{gid}"
        cmt_cfg = ChannelConfig(
            channel_id=cmt_id, senders=list(ctx.agreement_ids),
            receivers=list(members), f_s=ctx.f_a, f_r=ctx.f_e,
            capacity=ctx.commit_capacity, signing_digest=commit_signing_digest,
            batching=ctx.batching, batch_window=ctx.batch_window,
            max_batch=ctx.max_batch)
        sender_cls = RcSenderEndpoint if ctx.variant == "rc" else ScSenderEndpoint
        sender = sender_cls(cmt_cfg, self.node_id, self.signer, ctx.pubs,
                            ctx.counters, ctx.sim, self.channel_sender(cmt_id))
        sender._on_window_advance = self._commit_window_hook(gid, sender)
        self.commit_senders[gid] = sender
        self.endpoints[cmt_id] = sender

        req_cfg = ChannelConfig(
            channel_id=req_id, senders=list(members),
            receivers=list(ctx.agreement_ids), f_s=ctx.f_e, f_r=ctx.f_a,
            capacity=ctx.request_capacity)
        recv_cls = self._req_recv_cls()
        receiver = recv_cls(req_cfg, self.node_id, self.signer, ctx.pubs,
                            ctx.counters, ctx.sim, self.channel_sender(req_id))
        self.req_receivers[gid] = receiver
        self.endpoints[req_id] = receiver
        self._pending_sends.setdefault(gid, set())

    def _req_recv_cls(self):
        from .irmc.rc import RcReceiverEndpoint
        from .irmc.sc import ScReceiverEndpoint
        return RcReceiverEndpoint if self.ctx.variant == "rc" else ScReceiverEndpoint

    def _detach_group(self, gid: str) -> None:
        self.registry.pop(gid, None)
        self.commit_senders.pop(gid, None)
        self.req_receivers.pop(gid, None)
        self.endpoints.pop(f"cmt:{gid}", None)
        self.endpoints.pop(f"req:{gid}", None)
        self._pending_sends.pop(gid, None)

    def _commit_window_hook(self, gid: str, sender):
        variant_hook = type(sender)._on_window_advance  # class-level GC hook

        def hook(sc, start):
            variant_hook(sender, sc, start)
            self._retry_pending(gid, start)

        return hook

    def _retry_pending(self, gid: str, start: int) -> None:
        pending = self._pending_sends.get(gid)
        if pending is None:
            return
        # slots below the new window start were superseded by a checkpoint
        self._pending_sends[gid] = {s for s in pending if s >= start}
        self._drive_dissemination()

    # -- message dispatch -------------------------------------------------

    def handle(self, src: str, msg) -> None:
        if isinstance(msg, CONSENSUS_MSGS):
            if src in self.ctx.agreement_ids:
                self.consensus.on_message(src, msg)
        elif isinstance(msg, VerifyMsg):
            self._on_verify(src, msg)
        elif isinstance(msg, CheckpointVote):
            self._on_ckpt_vote(src, msg)
        elif isinstance(msg, FetchCheckpoint):
            self._on_fetch_ckpt(src, msg)
        elif isinstance(msg, CheckpointData):
            self._on_ckpt_data(src, msg)
        elif isinstance(msg, RegistryQuery):
            self._on_registry_query(src, msg)

    # -- request fetching (per client, per request channel) ----------------

    def _fetch(self, gid: str, c: int) -> None:
        receiver = self.req_receivers.get(gid)
        if receiver is None:
            return
        pos = self.tplus.get(c, 1)
        key = (gid, c)
        if self._fetch_outstanding.get(key) == pos:
            return
        self._fetch_outstanding[key] = pos
        receiver.receive(c, pos, lambda v, gid=gid, c=c, pos=pos:
                         self._on_fetched(gid, c, pos, v))

    def _on_fetched(self, gid: str, c: int, pos: int, value) -> None:
        if self._fetch_outstanding.get((gid, c)) == pos:
            self._fetch_outstanding.pop((gid, c), None)
        if isinstance(value, TooOld):
            self.tplus[c] = max(self.tplus.get(c, 1), value.start)
        else:
            self.tplus[c] = max(self.tplus.get(c, 1), pos + 1)
            self._ingest_request(c, pos, value)
        self._fetch(gid, c)

    def _ingest_request(self, c: int, t_c: int, payload: bytes) -> None:
        try:
            r = wire.decode(payload)
        except wire.MalformedError:
            return
        if not isinstance(r, Request) or r.c != c or r.t_c != t_c:
            return
        if r.kind == WEAK_READ or t_c <= self.t.get(c, 0):
            return
        if not self.ctx.offload_verification:
            pub = self.ctx.pubs.get(self.ctx.client_node(c))
            if pub is None or not crypto.verify(pub, request_digest(r), r.sig,
                                                self.counters):
                return
            self.consensus.order(c, t_c, r)
            return
        d = (c, t_c, sha256(payload))
        self._req_payloads[d] = r
        support = self._support.setdefault(d, set())
        if self.node_id not in support:
            support.add(self.node_id)
            self._queue_verify(d)
        self._check_eligible(d)

    def _queue_verify(self, d) -> None:
        self._verify_out.append(d)
        if not self._verify_scheduled:
            self._verify_scheduled = True
            self.sim.after(0.0, self._flush_verify)

    def _flush_verify(self) -> None:
        self._verify_scheduled = False
        while self._verify_out:
            batch = self._verify_out[: self.ctx.verify_batch_cap]
            self._verify_out = self._verify_out[self.ctx.verify_batch_cap:]
            m = VerifyMsg(descriptors=batch, signer=self.node_id)
            for peer in self.peers:
                self.send_msg(peer, m, tag="verify")

    def _on_verify(self, src: str, m: VerifyMsg) -> None:
        if src not in self.ctx.agreement_ids or m.signer != src:
            return
        for d in m.descriptors:
            if not (isinstance(d, tuple) and len(d) == 3):
                continue
            support = self._support.setdefault(d, set())
            support.add(src)
            # adopt once f_a+1 peers attest the transfer, even without payload
            if (self.node_id not in support
                    and len(support) >= self.ctx.f_a + 1):
                support.add(self.node_id)
                self._queue_verify(d)
            self._check_eligible(d)

    def _check_eligible(self, d) -> None:
        if d in self._eligible:
            return
        if len(self._support.get(d, ())) >= 2 * self.ctx.f_a + 1:
            self._eligible.add(d)
            r = self._req_payloads.get(d)
            if r is not None:
                self.consensus.order(d[0], d[1], r)

    # -- ordering and dissemination ----------------------------------------

    def _on_consensus_ordered(self, s: int, noop: bool, batch: list) -> None:
        self._record_slot(s, noop, batch)
        self._ordered[s] = (noop, batch)
        self._drive_dissemination()

    def _drive_dissemination(self) -> None:
        if self._driving:
            return
        self._driving = True
        try:
            while True:
                # first retry slots blocked on individual channel windows
                for gid in sorted(self._pending_sends):
                    sent = {s for s in self._pending_sends[gid]
                            if self._try_send(gid, s)}
                    self._pending_sends[gid] -= sent
                s = self._d_next
                if s not in self._ordered or s > self.win_hi:
                    return
                accepted = 0
                for gid in sorted(self.registry):
                    if self._try_send(gid, s):
                        accepted += 1
                    else:
                        self._pending_sends[gid].add(s)
                needed = max(0, len(self.registry) - self.ctx.z)
                if accepted < needed:
                    return  # too many straggling channels: stall here
                del self._ordered[s]
                self.s_n = max(self.s_n, s)
                self._d_next = s + 1
                if s % self.ctx.k_a == 0:
                    self._make_checkpoint(s)
        finally:
            self._driving = False

    def _record_slot(self, s: int, noop: bool, batch: list) -> None:
        if s in self.hist:
            return
        self.hist[s] = (noop, batch)
        for old in [k for k in self.hist
                    if k <= s - self.ctx.commit_capacity]:
            del self.hist[old]
        for r in batch:
            self.t[r.c] = max(self.t.get(r.c, 0), r.t_c)
            self.tplus[r.c] = max(self.tplus.get(r.c, 1), r.t_c + 1)
            d_key = (r.c, r.t_c, sha256(wire.encode(r)))
            self._req_payloads.pop(d_key, None)
            if r.kind == ADMIN:
                self._apply_admin(s, r)

    def _execute_payload(self, gid: str, s: int) -> bytes | None:
        entry = self.hist.get(s)
        if entry is None:
            return None
        noop, batch = entry
        entries = []
        if not noop:
            for r in batch:
                if r.kind == WRITE:
                    entries.append(ExecEntryFull(request=r))
                elif r.kind == STRONG_READ and r.target_group == gid:
                    entries.append(ExecEntryFull(request=r))
                else:  # foreign strong reads and admin ops: hash placeholder
                    entries.append(ExecEntryHash(
                        c=r.c, t_c=r.t_c, op_hash=sha256(wire.encode(r))))
        return wire.encode(ExecuteMsg(s=s, entries=entries))

    def _try_send(self, gid: str, s: int) -> bool:
        sender = self.commit_senders.get(gid)
        if sender is None:
            return True  # group removed meanwhile; nothing to do
        payload = self._execute_payload(gid, s)
        if payload is None:
            return True  # below hist horizon: superseded by a checkpoint
        try:
            sender.send(0, s, payload)
            return True
        except SendWindowError:
            return False

    # -- agreement checkpoints ---------------------------------------------

    def _make_checkpoint(self, s: int) -> None:
        hist_items = [(k, noop, batch)
                      for k, (noop, batch) in sorted(self.hist.items()) if k <= s]
        snapshot = AgreementSnapshot(
            s=s, t=sorted(self.t.items()), tplus=sorted(self.tplus.items()),
            hist=hist_items)
        self._own_ckpts[s] = snapshot
        for old in [k for k in self._own_ckpts if k < s]:
            del self._own_ckpts[old]
        digest = snapshot_digest(snapshot)
        sig = self.signer.sign_digest(
            _ckpt_vote_digest(AGREEMENT_CKPT_GROUP, s, digest, self.node_id))
        vote = CheckpointVote(group=AGREEMENT_CKPT_GROUP, s=s, digest=digest,
                              signer=self.node_id, sig=sig)
        self._record_ckpt_vote(vote)
        for peer in self.peers:
            self.send_msg(peer, vote, tag="checkpoint")

    def _on_ckpt_vote(self, src: str, vote: CheckpointVote) -> None:
        if vote.group != AGREEMENT_CKPT_GROUP or vote.signer != src:
            return
        if src not in self.ctx.agreement_ids:
            return
        pub = self.ctx.pubs.get(src)
        if pub is None or not crypto.verify(
                pub, _ckpt_vote_digest(vote.group, vote.s, vote.digest, src),
                vote.sig, self.counters):
            return
        self._record_ckpt_vote(vote)

    def _record_ckpt_vote(self, vote: CheckpointVote) -> None:
        votes = self._ckpt_votes.setdefault((vote.s, vote.digest), {})
        votes[vote.signer] = vote.sig
        if len(votes) >= self.ctx.f_a + 1 and vote.s > self.stable_s:
            self._on_stable_ckpt(vote.s, vote.digest)

    def _on_stable_ckpt(self, s: int, digest: bytes) -> None:
        if s <= self.stable_s:
            return
        snapshot = self._own_ckpts.get(s)
        if snapshot is None or snapshot_digest(snapshot) != digest:
            # we are behind (or diverged): fetch the snapshot from a voter
            self._fetch_agreement_ckpt(s, digest)
            return
        self.stable_s = s
        self.win_lo, self.win_hi = s + 1, s + self.ctx.ag_win
        hist_len = len(snapshot.hist)
        for gid, sender in sorted(self.commit_senders.items()):
            sender.move_window(0, s - hist_len + 1)
        self.consensus.collect_garbage(s + 1, dict(snapshot.t))
        for old in [k for k in self._ordered if k <= s]:
            del self._ordered[old]
        self._d_next = max(self._d_next, s + 1)
        self._gc_verify_state()
        self._drive_dissemination()

    def _gc_verify_state(self) -> None:
        for d in [d for d in self._support if d[1] <= self.t.get(d[0], 0)]:
            self._support.pop(d, None)
            self._req_payloads.pop(d, None)
            self._eligible.discard(d)

    def _fetch_agreement_ckpt(self, s: int, digest: bytes) -> None:
        if self._fetching:
            return
        self._fetching = True
        voters = [v for v in self._ckpt_votes.get((s, digest), {})
                  if v != self.node_id]
        if not voters:
            self._fetching = False
            return
        self.send_msg(sorted(voters)[0],
                      FetchCheckpoint(group=AGREEMENT_CKPT_GROUP, min_s=s,
                                      requester=self.node_id),
                      tag="checkpoint")
        self.sim.after(4 * self.ctx.sim.topology.max_one_way(),
                       self._fetch_retry)

    def _fetch_retry(self) -> None:
        if not self._fetching:
            return
        self._fetching = False
        # retry against the newest stable checkpoint we have votes for
        best = max(((s, d) for (s, d), v in self._ckpt_votes.items()
                    if len(v) >= self.ctx.f_a + 1 and s > self.stable_s),
                   default=None)
        if best is not None:
            self._fetch_agreement_ckpt(*best)

    def _on_fetch_ckpt(self, src: str, m: FetchCheckpoint) -> None:
        if m.group != AGREEMENT_CKPT_GROUP:
            return
        for s in sorted(self._own_ckpts, reverse=True):
            if s >= m.min_s:
                snapshot = self._own_ckpts[s]
                digest = snapshot_digest(snapshot)
                votes = sorted(self._ckpt_votes.get((s, digest), {}).items())
                self.send_msg(src, CheckpointData(
                    group=m.group, s=s, snapshot=wire.encode(snapshot),
                    votes=votes), tag="checkpoint")
                return

    def _on_ckpt_data(self, src: str, m: CheckpointData) -> None:
        if m.group != AGREEMENT_CKPT_GROUP:
            return
        self._fetching = False
        try:
            snapshot = wire.decode(m.snapshot)
        except wire.MalformedError:
            return
        if not isinstance(snapshot, AgreementSnapshot) or snapshot.s != m.s:
            return
        digest = snapshot_digest(snapshot)
        valid = set()
        for signer, sig in m.votes:
            pub = self.ctx.pubs.get(signer)
            if (signer in self.ctx.agreement_ids and pub is not None
                    and crypto.verify(pub, _ckpt_vote_digest(
                        m.group, m.s, digest, signer), sig, self.counters)):
                valid.add(signer)
        if len(valid) < self.ctx.f_a + 1 or m.s <= self.stable_s:
            return
        self._adopt_agreement_ckpt(snapshot, digest)

    def _adopt_agreement_ckpt(self, snapshot: AgreementSnapshot,
                              digest: bytes) -> None:
        s = snapshot.s
        for c, t_c in snapshot.t:
            self.t[c] = max(self.t.get(c, 0), t_c)
        for c, pos in snapshot.tplus:
            self.tplus[c] = max(self.tplus.get(c, 1), pos)
        behind = s > self.s_n
        for k, noop, batch in snapshot.hist:
            if k not in self.hist:
                self.hist[k] = (noop, list(batch))
                for r in batch:
                    if r.kind == ADMIN:
                        self._apply_admin(k, r, replay=True)
        self._own_ckpts[s] = snapshot
        self.stable_s = s
        self.win_lo, self.win_hi = s + 1, s + self.ctx.ag_win
        hist_len = len(snapshot.hist)
        for gid, sender in sorted(self.commit_senders.items()):
            sender.move_window(0, s - hist_len + 1)
        if behind:
            resend_from = max(self.s_n + 1, s - hist_len + 1)
            for k in range(resend_from, s + 1):
                for gid in sorted(self.registry):
                    if not self._try_send(gid, k):
                        self._pending_sends[gid].add(k)
            self.s_n = s
        self._d_next = max(self._d_next, s + 1)
        for old in [k for k in self._ordered if k <= s]:
            del self._ordered[old]
        self.consensus.collect_garbage(s + 1, dict(snapshot.t))
        self._gc_verify_state()
        self._drive_dissemination()

    # -- registry & reconfiguration ----------------------------------------

    def _apply_admin(self, s: int, r: Request, replay: bool = False) -> None:
        try:
            op = wire.decode(r.op)
        except wire.MalformedError:
            op = None
        result = b"rejected"
        if isinstance(op, AddGroup):
            if op.group in self.registry:
                result = b"exists"
            elif op.members:
                region = op.members[0][1]
                members = [m for m, _ in op.members]
                self._attach_group(op.group, region, members)
                sender = self.commit_senders[op.group]
                if self.stable_s > 0:
                    hist_len = len(self._own_ckpts.get(
                        self.stable_s, AgreementSnapshot(0, [], [], [])).hist)
                    sender.move_window(0, max(1, self.stable_s - hist_len + 1))
                # replay retained history so the new channel can fill up
                start = sender.window(0)[0]
                for k in sorted(self.hist):
                    if start <= k <= self.s_n and not self._try_send(op.group, k):
                        self._pending_sends[op.group].add(k)
                for c in sorted(self.ctx.clients):
                    self._fetch(op.group, c)
                result = b"ok"
        elif isinstance(op, RemoveGroup):
            if op.group not in self.registry:
                result = b"unknown"
            elif len(self.registry) - self.ctx.z < 2:
                result = b"rejected"
            else:
                self._detach_group(op.group)
                result = b"ok"
        if not replay and self.ctx.clients.get(r.c) is not None:
            self.send_msg(self.ctx.client_node(r.c),
                          Reply(c=r.c, t_c=r.t_c, result=result, s_write=s,
                                s_update=0, replica=self.node_id),
                          tag="client")

    def _on_registry_query(self, src: str, m: RegistryQuery) -> None:
        groups = [(gid, region, list(members))
                  for gid, (region, members) in sorted(self.registry.items())]
        self.send_msg(src, RegistryReply(nonce=m.nonce, groups=groups,
                                         signer=self.node_id), tag="registry")

    # -- diagnostics --------------------------------------------------------

    def pending_waits(self):
        yield from super().pending_waits()
        yield from self.consensus.pending_waits()
        for gid, slots in sorted(self._pending_sends.items()):
            for s in slots:
                yield f"commit send to {gid} blocked at s={s}"
