"""Intra-region consensus: a PBFT-style total-order broadcast.

The interface is deliberately narrow so another consensus protocol could be
dropped in: order() feeds requests, ordered() fires ascending per sequence
number, collect_garbage() reclaims slots below a stable checkpoint.

Normal-case messages (pre-prepare / prepare / commit) are MAC-authenticated by
the hosting node's transport; view-change and new-view messages carry
signatures so they can be relayed as justification.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import crypto, wire
from .crypto import sha256
from .messages import (
    Commit,
    ForwardRequest,
    NewView,
    PrePrepare,
    Prepare,
    ViewChange,
)


@dataclass
class AgreementConfig:
    f_a: int
    batch_limit: int = 16
    window: int = 64        # high/low watermark distance: bounds active slots
    request_timeout: float = 500.0  # per-request liveness timer (sim ms)

    def __post_init__(self):
        if self.f_a < 0:
            raise ValueError("f_a must be >= 0")
        if self.window < 1 or self.batch_limit < 1:
            raise ValueError("window and batch_limit must be >= 1")

    @property
    def n_a(self) -> int:
        return 3 * self.f_a + 1


@dataclass
class _Slot:
    view: int = -1
    noop: bool = False
    batch: list = field(default_factory=list)
    digest: bytes = b""
    preprepared: bool = False
    prepare_votes: dict = field(default_factory=dict)  # digest -> set of ids
    commit_votes: dict = field(default_factory=dict)
    prepared: bool = False
    sent_commit: bool = False
    committed: bool = False


def _batch_digest(s: int, noop: bool, batch: list) -> bytes:
    return sha256(b"slot|" + wire.encode((s, noop, batch)))


def _vc_digest(vc: ViewChange) -> bytes:
    return sha256(b"vc|" + wire.encode(
        (vc.new_view, vc.last_delivered, vc.prepared, vc.signer)))


def _nv_digest(m: NewView) -> bytes:
    return sha256(b"nv|" + wire.encode(
        (m.view, m.view_changes, m.pre_prepares, m.signer)))


class Consensus:
    """One replica's consensus instance.

    send(dst, msg) ships a message to a peer replica; ordered_cb(s, noop,
    batch) receives committed slots in ascending order of s.
    """

    def __init__(self, cfg: AgreementConfig, owner: str, replicas: list,
                 sim, send, ordered_cb, signer, pubs):
        if len(replicas) != cfg.n_a:
            raise ValueError(f"need {cfg.n_a} replicas, got {len(replicas)}")
        self.cfg = cfg
        self.owner = owner
        self.replicas = list(replicas)
        self.sim = sim
        self.send = send
        self.ordered_cb = ordered_cb
        self.signer = signer
        self.pubs = pubs

        self.view = 0
        self.active = True          # False while a view change is in flight
        self.gc_low = 1             # first live slot (low watermark)
        self.next_propose = 1
        self.next_deliver = 1
        self.slots: dict[int, _Slot] = {}
        self.t: dict[int, int] = {}          # c -> highest delivered counter
        self.pending: dict = {}              # (c, t_c) -> (request, timer)
        self.assigned: dict = {}             # (c, t_c) -> proposed slot
        self.queue: list = []                # leader's unproposed keys
        self._cut_scheduled = False
        self._vcs: dict[int, dict] = {}      # new_view -> {signer: ViewChange}
        self.vc_view = 0                     # highest view we asked for
        self._nv_sent: set[int] = set()
        self.view_changes_completed = 0
        # test hook: (dst, PrePrepare) -> PrePrepare | None, scripted faults
        self.preprepare_hook = None

    # -- helpers ------------------------------------------------------------

    def leader_of(self, view: int) -> str:
        return self.replicas[view % len(self.replicas)]

    @property
    def is_leader(self) -> bool:
        return self.leader_of(self.view) == self.owner

    def _broadcast(self, msg) -> None:
        for r in self.replicas:
            if r != self.owner:
                self.send(r, msg)

    def _slot(self, s: int) -> _Slot:
        slot = self.slots.get(s)
        if slot is None:
            slot = self.slots[s] = _Slot()
        return slot

    def _in_window(self, s: int) -> bool:
        return self.gc_low <= s < self.gc_low + self.cfg.window

    # -- public interface -----------------------------------------------------

    def order(self, c: int, t_c: int, request) -> None:
        key = (c, t_c)
        if t_c <= self.t.get(c, 0) or key in self.pending:
            return
        timer = self.sim.after(self.cfg.request_timeout,
                               lambda: self._on_request_timeout(key))
        self.pending[key] = (request, timer)
        if self.is_leader:
            self.queue.append(key)
            self._schedule_cut()
        else:
            self.send(self.leader_of(self.view),
                      ForwardRequest(request=request, signer=self.owner))

    def collect_garbage(self, s: int, t: dict) -> None:
        if s <= self.gc_low:
            return
        self.gc_low = s
        for pos in [p for p in self.slots if p < s]:
            del self.slots[pos]
        self.next_deliver = max(self.next_deliver, s)
        self.next_propose = max(self.next_propose, s)
        for c, t_c in t.items():
            self.t[c] = max(self.t.get(c, 0), t_c)
        for key in [k for k in self.pending if k[1] <= self.t.get(k[0], 0)]:
            self.pending.pop(key)[1].cancel()
            self.assigned.pop(key, None)
        self.queue = [k for k in self.queue if k in self.pending]
        if self.is_leader:
            self._schedule_cut()  # the window may have opened

    def on_message(self, src: str, msg) -> None:
        if isinstance(msg, ForwardRequest):
            if src in self.replicas and self.is_leader:
                r = msg.request
                self.order(r.c, r.t_c, r)
        elif isinstance(msg, PrePrepare):
            self._on_preprepare(src, msg)
        elif isinstance(msg, Prepare):
            self._on_vote(src, msg, commit_phase=False)
        elif isinstance(msg, Commit):
            self._on_vote(src, msg, commit_phase=True)
        elif isinstance(msg, ViewChange):
            self._on_viewchange(src, msg)
        elif isinstance(msg, NewView):
            self._on_new_view(src, msg)

    def pending_waits(self):
        for c, t_c in sorted(self.pending):
            yield f"consensus order(c={c}, t_c={t_c}) undecided (view {self.view})"

    # -- proposing ------------------------------------------------------------

    def _schedule_cut(self) -> None:
        if not self._cut_scheduled:
            self._cut_scheduled = True
            self.sim.after(0.0, self._cut_batches)

    def _cut_batches(self) -> None:
        self._cut_scheduled = False
        if not (self.active and self.is_leader):
            return
        ready = [k for k in self.queue if k in self.pending and k not in self.assigned]
        self.queue = []
        while ready and self.next_propose < self.gc_low + self.cfg.window:
            chunk, ready = ready[: self.cfg.batch_limit], ready[self.cfg.batch_limit:]
            s = self.next_propose
            self.next_propose += 1
            batch = [self.pending[k][0] for k in chunk]
            for k in chunk:
                self.assigned[k] = s
            pp = PrePrepare(view=self.view, s=s, noop=False, batch=batch,
                            signer=self.owner)
            for r in self.replicas:
                if r == self.owner:
                    continue
                out = pp if self.preprepare_hook is None else self.preprepare_hook(r, pp)
                if out is not None:
                    self.send(r, out)
            self._on_preprepare(self.owner, pp)
        self.queue = ready  # anything beyond the watermark window waits

    # -- normal-case phases -----------------------------------------------------

    def _on_preprepare(self, src: str, pp: PrePrepare) -> None:
        if not self.active or pp.view != self.view or pp.signer != src:
            return
        if src != self.leader_of(pp.view) or not self._in_window(pp.s):
            return
        slot = self._slot(pp.s)
        if slot.preprepared and slot.view == pp.view:
            return  # first pre-prepare of a view wins; equivocation ignored
        slot.view = pp.view
        slot.noop = pp.noop
        slot.batch = list(pp.batch)
        slot.digest = _batch_digest(pp.s, pp.noop, pp.batch)
        slot.preprepared = True
        # the leader's pre-prepare doubles as its prepare vote
        slot.prepare_votes.setdefault(slot.digest, set()).add(src)
        if self.owner != src:
            p = Prepare(view=self.view, s=pp.s, digest=slot.digest, signer=self.owner)
            self._broadcast(p)
            slot.prepare_votes[slot.digest].add(self.owner)
        else:
            slot.prepare_votes[slot.digest].add(self.owner)
        self._check_slot(pp.s, slot)

    def _on_vote(self, src: str, msg, commit_phase: bool) -> None:
        if not self.active or msg.view != self.view or msg.signer != src:
            return
        if src not in self.replicas or not self._in_window(msg.s):
            return
        slot = self._slot(msg.s)
        votes = slot.commit_votes if commit_phase else slot.prepare_votes
        votes.setdefault(msg.digest, set()).add(src)
        self._check_slot(msg.s, slot)

    def _check_slot(self, s: int, slot: _Slot) -> None:
        if not slot.preprepared:
            return
        quorum = 2 * self.cfg.f_a + 1
        if not slot.prepared and len(slot.prepare_votes.get(slot.digest, ())) >= quorum:
            slot.prepared = True
        if slot.prepared and not slot.sent_commit:
            slot.sent_commit = True
            c = Commit(view=slot.view, s=s, digest=slot.digest, signer=self.owner)
            self._broadcast(c)
            slot.commit_votes.setdefault(slot.digest, set()).add(self.owner)
        if (slot.prepared and not slot.committed
                and len(slot.commit_votes.get(slot.digest, ())) >= quorum):
            slot.committed = True
            self._try_deliver()

    def _try_deliver(self) -> None:
        while True:
            slot = self.slots.get(self.next_deliver)
            if slot is None or not slot.committed:
                return
            s = self.next_deliver
            self.next_deliver += 1
            for req in slot.batch:
                key = (req.c, req.t_c)
                self.t[req.c] = max(self.t.get(req.c, 0), req.t_c)
                entry = self.pending.pop(key, None)
                if entry is not None:
                    entry[1].cancel()
                self.assigned.pop(key, None)
            self.ordered_cb(s, slot.noop, list(slot.batch))

    # -- view change ------------------------------------------------------------

    def _on_request_timeout(self, key) -> None:
        if key in self.pending:
            self._initiate_view_change(max(self.view, self.vc_view) + 1)

    def _initiate_view_change(self, nv: int) -> None:
        if nv <= max(self.view, self.vc_view):
            return
        self.vc_view = nv
        self.active = False
        prepared = [(s, slot.view, slot.noop, slot.batch)
                    for s, slot in sorted(self.slots.items())
                    if slot.prepared and s >= self.gc_low]
        vc = ViewChange(new_view=nv, last_delivered=self.gc_low,
                        prepared=prepared, signer=self.owner, sig=b"")
        vc = replace(vc, sig=self.signer.sign_digest(_vc_digest(vc)))
        self._vcs.setdefault(nv, {})[self.owner] = vc
        self._broadcast(vc)
        self._maybe_new_view(nv)
        # escalate if the view change itself stalls (e.g. faulty next leader)
        self.sim.after(2 * self.cfg.request_timeout,
                       lambda: self._escalate_if_stuck(nv))

    def _escalate_if_stuck(self, nv: int) -> None:
        if not self.active and self.view < nv and self.pending:
            self._initiate_view_change(max(self.view, self.vc_view) + 1)

    def _on_viewchange(self, src: str, vc: ViewChange) -> None:
        if vc.new_view <= self.view or vc.signer != src or src not in self.replicas:
            return
        pub = self.pubs.get(src)
        if pub is None or not crypto.verify(pub, _vc_digest(replace(vc, sig=b"")),
                                            vc.sig, self.signer.counters):
            return
        self._vcs.setdefault(vc.new_view, {})[src] = vc
        # join once f_a+1 replicas ask for a higher view
        if (vc.new_view > max(self.view, self.vc_view)
                and len(self._vcs[vc.new_view]) >= self.cfg.f_a + 1):
            self._initiate_view_change(vc.new_view)
        self._maybe_new_view(vc.new_view)

    def _maybe_new_view(self, nv: int) -> None:
        if (self.leader_of(nv) != self.owner or nv in self._nv_sent
                or nv <= self.view):
            return
        vcs = self._vcs.get(nv, {})
        if len(vcs) < 2 * self.cfg.f_a + 1:
            return
        self._nv_sent.add(nv)
        chosen = [vcs[k] for k in sorted(vcs)][: 2 * self.cfg.f_a + 1]
        base = max([self.gc_low] + [vc.last_delivered for vc in chosen])
        best: dict[int, tuple] = {}
        for vc in chosen:
            for s, view, noop, batch in vc.prepared:
                if s >= base and (s not in best or view > best[s][0]):
                    best[s] = (view, noop, batch)
        max_s = max(best, default=base - 1)
        pps = []
        for s in range(base, max_s + 1):
            view, noop, batch = best.get(s, (nv, True, []))
            pps.append(PrePrepare(view=nv, s=s, noop=noop, batch=batch,
                                  signer=self.owner))
        m = NewView(view=nv, view_changes=chosen, pre_prepares=pps,
                    signer=self.owner, sig=b"")
        m = replace(m, sig=self.signer.sign_digest(_nv_digest(m)))
        self._broadcast(m)
        self._enter_view(m)

    def _on_new_view(self, src: str, m: NewView) -> None:
        if m.view <= self.view or m.signer != src or src != self.leader_of(m.view):
            return
        pub = self.pubs.get(src)
        if pub is None or not crypto.verify(pub, _nv_digest(replace(m, sig=b"")),
                                            m.sig, self.signer.counters):
            return
        signers = set()
        for vc in m.view_changes:
            if (isinstance(vc, ViewChange) and vc.new_view == m.view
                    and vc.signer in self.replicas and vc.signer not in signers):
                p = self.pubs.get(vc.signer)
                if p is not None and crypto.verify(
                        p, _vc_digest(replace(vc, sig=b"")), vc.sig,
                        self.signer.counters):
                    signers.add(vc.signer)
        if len(signers) < 2 * self.cfg.f_a + 1:
            return
        if any(pp.view != m.view for pp in m.pre_prepares):
            return
        self._enter_view(m)

    def _enter_view(self, m: NewView) -> None:
        self.view = m.view
        self.vc_view = max(self.vc_view, m.view)
        self.active = True
        self.view_changes_completed += 1
        carried = {(r.c, r.t_c) for pp in m.pre_prepares for r in pp.batch}
        self.assigned = {}
        max_s = max((pp.s for pp in m.pre_prepares), default=self.gc_low - 1)
        self.next_propose = max(self.next_propose, max_s + 1)
        for pp in m.pre_prepares:
            self.slots[pp.s] = _Slot()  # re-agree the slot in the new view
            for r in pp.batch:
                self.assigned[(r.c, r.t_c)] = pp.s
            self._on_preprepare(m.signer, pp)
        # restart liveness timers and re-queue what the new leader must propose
        for key, (request, timer) in list(self.pending.items()):
            timer.cancel()
            new_timer = self.sim.after(self.cfg.request_timeout,
                                       lambda key=key: self._on_request_timeout(key))
            self.pending[key] = (request, new_timer)
            if key not in carried:
                if self.is_leader:
                    self.queue.append(key)
                else:
                    self.send(self.leader_of(self.view),
                              ForwardRequest(request=request, signer=self.owner))
        if self.is_leader:
            self._schedule_cut()
