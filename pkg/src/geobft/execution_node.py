"""Execution replica: validates and forwards client requests, consumes the
commit channel in order, executes against the key-value application, replies,
maintains execution checkpoints, serves weak reads against the session floor,
and gossips commit-slot evidence so weak reads stay available when the
wide-area link to the agreement region fails.
"""

from __future__ import annotations

from dataclasses import replace

from . import crypto, kvapp, wire
from .crypto import sha256
from .irmc.base import ChannelConfig, SigningContext, TooOld
from .irmc.rc import RcReceiverEndpoint, RcSenderEndpoint
from .irmc.sc import ScReceiverEndpoint, ScSenderEndpoint
from .messages import (
    ADMIN,
    CheckpointData,
    CheckpointVote,
    EvidenceMsg,
    ExecEntryFull,
    ExecSnapshot,
    ExecuteMsg,
    FetchCheckpoint,
    Reply,
    Request,
    StatusMsg,
    WEAK_READ,
    WRITE,
    STRONG_READ,
)
from .agreement_node import commit_signing_digest, request_digest
from .node import NetNode


def _exec_ckpt_digest(group: str, s: int, digest: bytes, signer: str) -> bytes:
    return sha256(b"eckptvote|" + wire.encode((group, s, digest, signer)))


def _exec_snapshot_digest(snapshot: ExecSnapshot) -> bytes:
    return sha256(b"eckpt|" + wire.encode(snapshot))


class ExecutionReplica(NetNode):
    def __init__(self, ctx, node_id: str, group: str, region: str,
                 members: list):
        super().__init__(ctx.sim, node_id, region, ctx.master, ctx.counters)
        self.ctx = ctx
        self.group = group
        self.members = list(members)
        self.peers = [m for m in members if m != node_id]
        self.signer = SigningContext(ctx.keys[node_id], ctx.counters)

        cmt_id, req_id = f"cmt:{group}", f"req:{group}"
        req_cfg = ChannelConfig(
            channel_id=req_id, senders=list(members),
            receivers=list(ctx.agreement_ids), f_s=ctx.f_e, f_r=ctx.f_a,
            capacity=ctx.request_capacity)
        sender_cls = RcSenderEndpoint if ctx.variant == "rc" else ScSenderEndpoint
        self.req_sender = sender_cls(req_cfg, node_id, self.signer, ctx.pubs,
                                     ctx.counters, ctx.sim,
                                     self.channel_sender(req_id))
        self.endpoints[req_id] = self.req_sender

        cmt_cfg = ChannelConfig(
            channel_id=cmt_id, senders=list(ctx.agreement_ids),
            receivers=list(members), f_s=ctx.f_a, f_r=ctx.f_e,
            capacity=ctx.commit_capacity, signing_digest=commit_signing_digest,
            batching=ctx.batching, batch_window=ctx.batch_window,
            max_batch=ctx.max_batch)
        recv_cls = RcReceiverEndpoint if ctx.variant == "rc" else ScReceiverEndpoint
        self.commit_receiver = recv_cls(cmt_cfg, node_id, self.signer, ctx.pubs,
                                        ctx.counters, ctx.sim,
                                        self.channel_sender(cmt_id))
        self.endpoints[cmt_id] = self.commit_receiver

        self.kv = kvapp.KvStore()
        self.s_n = 0
        self.t: dict[int, int] = {}          # c -> latest forwarded counter
        self.u: dict[int, Reply] = {}        # c -> last executed reply
        self.stable_ckpt_s = 0
        self._ckpts: dict[int, ExecSnapshot] = {}
        self._ckpt_votes: dict[tuple, dict] = {}
        self._fetch_timer = None
        self._fetch_target = 0
        self._fetch_rank = 0

        self._deferred_weak: list = []  # (Request, src client node, deadline)
        self._receive_outstanding = 0

        # evidence gossip
        self._peer_progress: dict[str, int] = {}
        self._gossip_scheduled = False
        self._forward_scheduled: set = set()

        # test hook: tamper with outgoing replies (faulty-replica scripts)
        self.reply_hook = None

        self._issue_receive()
        self._schedule_gossip()

    # -- client-facing ------------------------------------------------------

    def handle(self, src: str, msg) -> None:
        if isinstance(msg, Request):
            self._on_client_request(src, msg)
        elif isinstance(msg, CheckpointVote):
            self._on_ckpt_vote(src, msg)
        elif isinstance(msg, FetchCheckpoint):
            self._on_fetch_ckpt(src, msg)
        elif isinstance(msg, CheckpointData):
            self._on_ckpt_data(src, msg)
        elif isinstance(msg, StatusMsg):
            self._on_status(src, msg)
        elif isinstance(msg, EvidenceMsg):
            self._on_evidence(src, msg)

    def _on_client_request(self, src: str, r: Request) -> None:
        if self.ctx.clients.get(r.c) is None or src != self.ctx.client_node(r.c):
            return
        if r.kind == WEAK_READ:
            if kvapp.is_read_only(r.op):
                self._serve_weak_read(src, r)
            return
        if r.kind not in (WRITE, STRONG_READ, ADMIN):
            return
        pub = self.ctx.pubs.get(self.ctx.client_node(r.c))
        if pub is None or not crypto.verify(pub, request_digest(r), r.sig,
                                            self.counters):
            return
        if r.t_c <= self.t.get(r.c, 0):
            cached = self.u.get(r.c)
            if cached is not None and cached.t_c == r.t_c:
                self.send_msg(src, cached, tag="client")
            return
        self.t[r.c] = r.t_c
        self.req_sender.move_window(r.c, r.t_c)
        try:
            self.req_sender.send(r.c, r.t_c, wire.encode(r))
        except Exception:
            pass  # outside window (raced move): client retransmission covers it

    # -- commit consumption -------------------------------------------------

    def _issue_receive(self) -> None:
        pos = self.s_n + 1
        if self._receive_outstanding == pos:
            return
        self._receive_outstanding = pos
        self.commit_receiver.receive(0, pos,
                                     lambda v, pos=pos: self._on_commit(pos, v))

    def _on_commit(self, pos: int, value) -> None:
        self._receive_outstanding = 0  # the waiter that fired is consumed
        if isinstance(value, TooOld):
            if value.start > self.s_n + 1:
                self._state_transfer(value.start - 1)
            else:
                self._issue_receive()
            return
        if pos != self.s_n + 1:
            self._issue_receive()
            return
        try:
            m = wire.decode(value)
        except wire.MalformedError:
            m = None
        if isinstance(m, ExecuteMsg) and m.s == pos:
            self.s_n = pos
            for entry in m.entries:
                if isinstance(entry, ExecEntryFull):
                    self._execute_entry(entry.request, pos)
            if self.s_n % self.ctx.k_e == 0:
                self._make_checkpoint(self.s_n)
            self._drain_deferred_weak_reads()
            self._schedule_gossip()
        else:
            self.s_n = pos  # malformed slot content: skip defensively
        self._issue_receive()

    def _execute_entry(self, r: Request, s: int) -> None:
        prev = self.u.get(r.c)
        if prev is not None and r.t_c <= prev.t_c:
            return
        result, s_update = self.kv.execute(r.op, s)
        reply = Reply(c=r.c, t_c=r.t_c, result=result, s_write=s,
                      s_update=s_update, replica=self.node_id)
        self.u[r.c] = reply
        self.t[r.c] = max(self.t.get(r.c, 0), r.t_c)
        if r.target_group == self.group and self.ctx.clients.get(r.c) is not None:
            out = reply if self.reply_hook is None else self.reply_hook(reply)
            if out is not None:
                self.send_msg(self.ctx.client_node(r.c), out, tag="client")

    # -- weak reads ---------------------------------------------------------

    def _serve_weak_read(self, src: str, r: Request) -> None:
        if self.s_n >= r.s_min:
            self._answer_weak_read(src, r)
            return
        deadline = self.sim.now + self.ctx.weak_read_timeout
        self._deferred_weak.append((r, src, deadline))
        self.sim.after(self.ctx.weak_read_timeout, self._expire_deferred)

    def _answer_weak_read(self, src: str, r: Request) -> None:
        result, s_update = self.kv.execute(r.op, self.s_n)
        reply = Reply(c=r.c, t_c=r.t_c, result=result, s_write=0,
                      s_update=s_update, replica=self.node_id)
        out = reply if self.reply_hook is None else self.reply_hook(reply)
        if out is not None:
            self.send_msg(src, out, tag="client")

    def _drain_deferred_weak_reads(self) -> None:
        if not self._deferred_weak:
            return
        still = []
        for r, src, deadline in self._deferred_weak:
            if self.s_n >= r.s_min:
                self._answer_weak_read(src, r)
            else:
                still.append((r, src, deadline))
        self._deferred_weak = still

    def _expire_deferred(self) -> None:
        now = self.sim.now
        self._deferred_weak = [(r, src, dl) for r, src, dl in self._deferred_weak
                               if dl > now]  # expired reads dropped; client falls back

    # -- execution checkpoints ----------------------------------------------

    def _make_checkpoint(self, s: int) -> None:
        # replies are stored with the producing replica's id; strip it so all
        # replicas of a group produce byte-identical snapshots
        snapshot = ExecSnapshot(
            s=s, app_state=self.kv.snapshot(),
            u=sorted((c, replace(rep, replica=""))
                     for c, rep in self.u.items()))
        self._ckpts[s] = snapshot
        for old in [k for k in self._ckpts if k < s]:
            del self._ckpts[old]
        digest = _exec_snapshot_digest(snapshot)
        sig = self.signer.sign_digest(
            _exec_ckpt_digest(self.group, s, digest, self.node_id))
        vote = CheckpointVote(group=self.group, s=s, digest=digest,
                              signer=self.node_id, sig=sig)
        self._record_vote(vote)
        for peer in self.peers:
            self.send_msg(peer, vote, tag="checkpoint")

    def _on_ckpt_vote(self, src: str, vote: CheckpointVote) -> None:
        if vote.group != self.group or vote.signer != src or src not in self.members:
            return
        pub = self.ctx.pubs.get(src)
        if pub is None or not crypto.verify(
                pub, _exec_ckpt_digest(vote.group, vote.s, vote.digest, src),
                vote.sig, self.counters):
            return
        self._record_vote(vote)

    def _record_vote(self, vote: CheckpointVote) -> None:
        votes = self._ckpt_votes.setdefault((vote.s, vote.digest), {})
        votes[vote.signer] = vote.sig
        if len(votes) >= self.ctx.f_e + 1 and vote.s > self.stable_ckpt_s:
            snapshot = self._ckpts.get(vote.s)
            if snapshot is not None and \
                    _exec_snapshot_digest(snapshot) == vote.digest:
                self.stable_ckpt_s = vote.s
                self.commit_receiver.move_window(0, vote.s + 1)

    def stable_checkpoint(self):
        """(snapshot, votes) of the newest locally stable checkpoint, if any."""
        for s in sorted(self._ckpts, reverse=True):
            snapshot = self._ckpts[s]
            digest = _exec_snapshot_digest(snapshot)
            votes = self._ckpt_votes.get((s, digest), {})
            if len(votes) >= self.ctx.f_e + 1:
                return snapshot, sorted(votes.items())
        return None

    # -- state transfer -----------------------------------------------------

    def _state_transfer(self, min_s: int) -> None:
        if self._fetch_timer is not None and self._fetch_target >= min_s:
            return
        self._fetch_target = max(self._fetch_target, min_s)
        self._fetch_rank = 0
        self._send_fetch()

    def _fetch_candidates(self) -> list:
        own = list(self.peers)
        others = [m for gid, (_, ms) in sorted(self.ctx.groups.items())
                  if gid != self.group for m in ms]
        return own + others

    def _send_fetch(self) -> None:
        cands = self._fetch_candidates()
        if not cands:
            return
        dst = cands[self._fetch_rank % len(cands)]
        self._fetch_rank += 1
        self.send_msg(dst, FetchCheckpoint(group=self.group,
                                           min_s=self._fetch_target,
                                           requester=self.node_id),
                      tag="checkpoint")
        backoff = 4 * self.sim.topology.max_one_way() * (1 + self._fetch_rank // len(cands))
        self._fetch_timer = self.sim.after(backoff, self._fetch_retry)

    def _fetch_retry(self) -> None:
        self._fetch_timer = None
        if self.s_n < self._fetch_target:
            self._send_fetch()

    def _on_fetch_ckpt(self, src: str, m: FetchCheckpoint) -> None:
        found = self.stable_checkpoint()
        if found is None:
            return
        snapshot, votes = found
        if snapshot.s < m.min_s:
            return
        self.send_msg(src, CheckpointData(group=self.group, s=snapshot.s,
                                          snapshot=wire.encode(snapshot),
                                          votes=votes), tag="checkpoint")

    def _on_ckpt_data(self, src: str, m: CheckpointData) -> None:
        try:
            snapshot = wire.decode(m.snapshot)
        except wire.MalformedError:
            return
        if not isinstance(snapshot, ExecSnapshot) or snapshot.s != m.s:
            return
        digest = _exec_snapshot_digest(snapshot)
        # checkpoints may come from any execution group: application state and
        # write replies are interchangeable across groups executing the same
        # prefix, and the votes are bound to the originating group's id
        members = dict(self.ctx.groups).get(m.group, (None, []))[1]
        valid = set()
        for signer, sig in m.votes:
            pub = self.ctx.pubs.get(signer)
            if (signer in members and pub is not None and crypto.verify(
                    pub, _exec_ckpt_digest(m.group, m.s, digest, signer),
                    sig, self.counters)):
                valid.add(signer)
        if len(valid) < self.ctx.f_e + 1 or snapshot.s < self.s_n:
            return
        try:
            self.kv.apply(snapshot.app_state)
        except ValueError:
            return
        self.u = {c: replace(reply, replica=self.node_id)
                  for c, reply in snapshot.u}
        for c, reply in self.u.items():
            self.t[c] = max(self.t.get(c, 0), reply.t_c)
        self.s_n = snapshot.s
        self._ckpts[snapshot.s] = snapshot
        votes = self._ckpt_votes.setdefault((snapshot.s, digest), {})
        for signer, sig in m.votes:
            if signer in valid:
                votes[signer] = sig
        self.stable_ckpt_s = max(self.stable_ckpt_s, snapshot.s)
        self.commit_receiver.move_window(0, snapshot.s + 1)
        self._drain_deferred_weak_reads()
        self._issue_receive()

    # -- evidence gossip (weak-read availability) ---------------------------

    def _schedule_gossip(self) -> None:
        if not self.ctx.cert_forwarding or self._gossip_scheduled:
            return
        self._gossip_scheduled = True
        self.sim.after(self.ctx.gossip_period, self._gossip_tick)

    def _gossip_tick(self) -> None:
        self._gossip_scheduled = False
        sub = self.commit_receiver._sub(0)
        m = StatusMsg(channel=f"cmt:{self.group}",
                      positions=[(0, sub.contiguous)], signer=self.node_id)
        for peer in self.peers:
            self.send_msg(peer, m, tag="gossip")
        # status exchange is recurring so a replica cut off from the agreement
        # region still announces its progress and can be caught up by peers
        self._schedule_gossip()

    def _on_status(self, src: str, m: StatusMsg) -> None:
        if not self.ctx.cert_forwarding or src not in self.members:
            return
        for sc, pos in m.positions:
            prev = self._peer_progress.get(src, 0)
            self._peer_progress[src] = max(prev, pos)
            mine = self.commit_receiver._sub(0).contiguous
            if mine > pos and src not in self._forward_scheduled:
                self._forward_scheduled.add(src)
                self.sim.after(self.ctx.forward_wait,
                               lambda src=src: self._forward_to(src))

    def _forward_to(self, dst: str) -> None:
        self._forward_scheduled.discard(dst)
        start = self._peer_progress.get(dst, 0) + 1
        if start < self.commit_receiver.window_start(0):
            # the evidence the peer needs was garbage-collected past a stable
            # checkpoint; push the checkpoint so the peer can jump forward
            found = self.stable_checkpoint()
            if found is not None:
                snapshot, votes = found
                self.send_msg(dst, CheckpointData(
                    group=self.group, s=snapshot.s,
                    snapshot=wire.encode(snapshot), votes=votes),
                    tag="gossip")
                start = max(start, snapshot.s + 1)
        mine = self.commit_receiver._sub(0).contiguous
        for pos in range(start, mine + 1):
            evidence = self.commit_receiver.export_evidence(0, pos)
            if evidence:
                self.send_msg(dst, EvidenceMsg(channel=f"cmt:{self.group}",
                                               sc=0, pos=pos,
                                               evidence=list(evidence),
                                               signer=self.node_id),
                              tag="gossip")

    def _on_evidence(self, src: str, m: EvidenceMsg) -> None:
        if not self.ctx.cert_forwarding or src not in self.members:
            return
        self.commit_receiver.ingest_forwarded(list(m.evidence))
        self._schedule_gossip()

    # -- diagnostics --------------------------------------------------------

    def pending_waits(self):
        yield from super().pending_waits()
        if self._deferred_weak:
            yield f"{len(self._deferred_weak)} deferred weak reads"
