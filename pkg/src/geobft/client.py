"""Client session: request signing, reply voting, session floor tracking,
retry/fallback behavior, and registry-based group failover.

One session owns one client id and runs closed-loop: a single outstanding
operation at a time.  Writes and strong reads are signed and accepted on
f_e+1 matching replies; weak reads are MAC-only, carry the session floor
s_min, and fall back to a strong read on timeout.
"""

from __future__ import annotations

from dataclasses import replace

from . import crypto, wire
from .crypto import sha256
from .agreement_node import request_digest
from .messages import (
    ADMIN,
    Reply,
    RegistryQuery,
    RegistryReply,
    Request,
    STRONG_READ,
    WEAK_READ,
    WRITE,
)
from .node import NetNode


class ClientSession(NetNode):
    def __init__(self, ctx, c: int, region: str, group: str):
        super().__init__(ctx.sim, ctx.client_node(c), region, ctx.master,
                         ctx.counters)
        self.ctx = ctx
        self.c = c
        self.key = ctx.keys[self.node_id]
        self.group = group
        self.next_t_c = 1
        self.s_min = 0
        self.retry_budget = ctx.client_retry_budget

        self._inflight = None   # dict describing the outstanding operation
        self._nonce = 0
        self._registry_votes: dict = {}
        # operation records for metrics/checking:
        # (kind, op, t_c, start, end, result, s_write, s_update, group)
        self.history: list = []
        self.failures: list = []
        # test hook: (dst replica, Request) -> Request | None
        self.request_hook = None

    # -- public operations --------------------------------------------------

    def write(self, op: bytes, callback=None) -> None:
        self._start(WRITE, op, callback)

    def strong_read(self, op: bytes, callback=None) -> None:
        self._start(STRONG_READ, op, callback)

    def weak_read(self, op: bytes, callback=None) -> None:
        self._start(WEAK_READ, op, callback)

    def admin(self, op: bytes, callback=None) -> None:
        self._start(ADMIN, op, callback)

    @property
    def busy(self) -> bool:
        return self._inflight is not None

    # -- issue / retry machinery --------------------------------------------

    def _start(self, kind: int, op: bytes, callback) -> None:
        if self._inflight is not None:
            raise RuntimeError("closed-loop session already has an operation")
        t_c = self.next_t_c
        self.next_t_c += 1
        self._inflight = {
            "kind": kind, "op": op, "t_c": t_c, "callback": callback,
            "votes": {}, "retries": 0, "start": self.sim.now,
            "timer": None, "fallback": False, "s_min": self.s_min,
        }
        self._transmit()

    def _request(self) -> Request:
        f = self._inflight
        r = Request(c=self.c, t_c=f["t_c"], kind=f["kind"], op=f["op"],
                    target_group=self.group, s_min=self.s_min, sig=b"")
        if f["kind"] == WEAK_READ:
            return r
        return replace(r, sig=crypto.sign(self.key, request_digest(r),
                                          self.counters))

    def _targets(self) -> list:
        return list(dict(self.ctx.groups)[self.group][1])

    def _transmit(self) -> None:
        f = self._inflight
        r = self._request()
        for dst in self._targets():
            out = r if self.request_hook is None else self.request_hook(dst, r)
            if out is not None:
                self.send_msg(dst, out, tag="client")
        timeout = (self.ctx.weak_read_client_timeout if f["kind"] == WEAK_READ
                   else self.ctx.client_timeout)
        f["timer"] = self.sim.after(timeout, self._on_timeout)

    def _on_timeout(self) -> None:
        f = self._inflight
        if f is None:
            return
        if f["kind"] == WEAK_READ:
            # reissue as a strongly consistent read with a fresh counter
            f["kind"] = STRONG_READ
            f["fallback"] = True
            f["t_c"] = self.next_t_c
            self.next_t_c += 1
            f["votes"] = {}
            self._transmit()
            return
        f["retries"] += 1
        if f["retries"] % self.retry_budget == 0:
            self._consult_registry()
        else:
            self._transmit()

    # -- replies -------------------------------------------------------------

    def handle(self, src: str, msg) -> None:
        if isinstance(msg, Reply):
            self._on_reply(src, msg)
        elif isinstance(msg, RegistryReply):
            self._on_registry_reply(src, msg)

    def _on_reply(self, src: str, reply: Reply) -> None:
        f = self._inflight
        if f is None or reply.c != self.c or reply.t_c != f["t_c"]:
            return
        if reply.replica != src:
            return
        if f["kind"] == ADMIN:
            allowed = set(self.ctx.agreement_ids)
            quorum = self.ctx.f_a + 1
        else:
            allowed = set(dict(self.ctx.groups)[self.group][1])
            quorum = self.ctx.f_e + 1
        if src not in allowed:
            return
        key = sha256(wire.encode((reply.result, reply.t_c, reply.s_write,
                                  reply.s_update)))
        voters = f["votes"].setdefault(key, set())
        voters.add(src)
        if len(voters) >= quorum:
            self._accept(reply)

    def _accept(self, reply: Reply) -> None:
        f = self._inflight
        self._inflight = None
        if f["timer"] is not None:
            f["timer"].cancel()
        if f["kind"] in (WRITE, STRONG_READ, ADMIN):
            self.s_min = max(self.s_min, reply.s_write)
        else:
            self.s_min = max(self.s_min, reply.s_update)
        kind = f["kind"] if not f["fallback"] else WEAK_READ
        self.history.append({
            "kind": kind, "effective_kind": f["kind"], "op": f["op"],
            "t_c": reply.t_c, "start": f["start"], "end": self.sim.now,
            "result": reply.result, "s_write": reply.s_write,
            "s_update": reply.s_update, "group": self.group,
            "fallback": f["fallback"], "s_min": f["s_min"], "c": self.c,
        })
        if f["callback"] is not None:
            f["callback"](reply)

    # -- registry failover ---------------------------------------------------

    def _consult_registry(self) -> None:
        self._nonce += 1
        self._registry_votes = {}
        q = RegistryQuery(c=self.c, nonce=self._nonce)
        for dst in self.ctx.agreement_ids:
            self.send_msg(dst, q, tag="registry")
        # keep retrying the current group while waiting for the registry
        self._transmit()

    def _on_registry_reply(self, src: str, m: RegistryReply) -> None:
        if m.nonce != self._nonce or src not in self.ctx.agreement_ids:
            return
        key = wire.encode(m.groups)
        voters = self._registry_votes.setdefault(key, set())
        voters.add(src)
        if len(voters) < self.ctx.f_a + 1:
            return
        groups = wire.decode(key)
        ids = [gid for gid, _, _ in groups]
        if not ids:
            return
        if self.group not in ids:
            self._switch_group(ids[0], groups)
        elif len(ids) > 1:
            # current group unresponsive: move to the next group, preferring
            # one in our own region
            same_region = [gid for gid, region, _ in groups
                           if region == self.region and gid != self.group]
            fallback = [gid for gid in ids if gid != self.group]
            self._switch_group((same_region or fallback)[0], groups)

    def _switch_group(self, gid: str, groups) -> None:
        self.group = gid
        new_map = {g: (region, list(members)) for g, region, members in groups}
        self.ctx.groups.update(new_map)
        if self._inflight is not None:
            if self._inflight["timer"] is not None:
                self._inflight["timer"].cancel()
            self._inflight["votes"] = {}
            self._transmit()

    def pending_waits(self):
        if self._inflight is not None:
            f = self._inflight
            yield (f"client {self.c} op t_c={f['t_c']} kind={f['kind']} "
                   f"unacknowledged (group {self.group})")
