"""Shared node actor: envelope transport with MAC authentication.

Every protocol participant (replica or client host) is one simulator actor.
All point-to-point traffic travels in an Envelope whose MAC is keyed by the
unordered sender/receiver pair; messages failing authentication are dropped
silently.  Channel endpoint traffic (AuthedMsg / ShareMsg) is routed to the
owning endpoint by channel id; everything else goes to handle().
"""

from __future__ import annotations

from . import crypto, wire
from .messages import AuthedMsg, Envelope, ShareMsg


class NetNode:
    def __init__(self, sim, node_id: str, region: str, master: bytes,
                 counters: crypto.OpCounters):
        self.sim = sim
        self.node_id = node_id
        self.region = region
        self.master = master
        self.counters = counters
        self.endpoints: dict[str, object] = {}  # channel id -> endpoint
        sim.add_node(node_id, region, self)

    def _pair_key(self, other: str) -> bytes:
        return crypto.pair_mac_key(self.master, self.node_id, other)

    def send_msg(self, dst: str, msg, tag: str = "") -> None:
        body = wire.encode(msg)
        mac = crypto.mac(self._pair_key(dst), body, self.counters)
        data = wire.encode(Envelope(sender=self.node_id, body=body, mac=mac))
        self.sim.send(self.node_id, dst, data, tag=tag or _default_tag(msg))

    def channel_sender(self, channel_id: str):
        """send_raw callback for an endpoint on this node."""
        def send_raw(dst, msg):
            self.send_msg(dst, msg, tag=channel_id)
        return send_raw

    def on_message(self, src: str, data: bytes) -> None:
        try:
            env = wire.decode(data)
        except wire.MalformedError:
            return
        if not isinstance(env, Envelope) or env.sender != src:
            return
        if not crypto.mac_verify(self._pair_key(src), env.body, env.mac,
                                 self.counters):
            return
        try:
            body = wire.decode(env.body)
        except wire.MalformedError:
            return
        if isinstance(body, AuthedMsg):
            try:
                inner = wire.decode(body.body)
            except wire.MalformedError:
                return
            ep = self.endpoints.get(getattr(inner, "channel", None))
            if ep is not None:
                ep.on_channel_message(inner, body.auth)
        elif isinstance(body, ShareMsg):
            ep = self.endpoints.get(body.channel)
            if ep is not None and hasattr(ep, "on_share"):
                ep.on_share(body)
        else:
            self.handle(src, body)

    def handle(self, src: str, msg) -> None:
        raise NotImplementedError

    def pending_waits(self):
        for ep in self.endpoints.values():
            if hasattr(ep, "pending_waits"):
                yield from ep.pending_waits()


def _default_tag(msg) -> str:
    return type(msg).__name__.lower()
