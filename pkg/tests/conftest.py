"""Shared fixtures: wiring IRMC endpoints onto simulator nodes."""

import pytest

from geobft import crypto, wire
from geobft.irmc.base import ChannelConfig, SigningContext
from geobft.irmc.rc import RcReceiverEndpoint, RcSenderEndpoint
from geobft.irmc.sc import ScReceiverEndpoint, ScSenderEndpoint
from geobft.messages import AuthedMsg, Envelope, ShareMsg
from geobft.sim import Simulator, Topology


class EndpointHost:
    """Minimal actor hosting a single channel endpoint on a sim node."""

    def __init__(self, sim, node_id, region):
        self.sim = sim
        self.node_id = node_id
        self.endpoint = None
        sim.add_node(node_id, region, self)

    def send_raw(self, dst, msg):
        body = wire.encode(msg)
        data = wire.encode(Envelope(sender=self.node_id, body=body, mac=b""))
        self.sim.send(self.node_id, dst, data, tag=msg.channel if hasattr(msg, "channel") else "ch")

    def on_message(self, src, data):
        try:
            env = wire.decode(data)
            body = wire.decode(env.body)
        except wire.MalformedError:
            return
        if isinstance(body, AuthedMsg):
            inner = wire.decode(body.body)
            self.endpoint.on_channel_message(inner, body.auth)
        elif isinstance(body, ShareMsg):
            self.endpoint.on_share(body)

    def pending_waits(self):
        if hasattr(self.endpoint, "pending_waits"):
            yield from self.endpoint.pending_waits()


def build_channel(variant, n_senders=3, n_receivers=3, f_s=1, f_r=1, seed=0,
                  scheme="fake", wan_latency=50.0, **cfg_kwargs):
    """Returns (sim, sender endpoints, receiver endpoints)."""
    topo = Topology(latency={("tx", "rx"): wan_latency})
    sim = Simulator(topo, seed=seed)
    counters = crypto.OpCounters()
    sender_ids = [f"S{i}" for i in range(n_senders)]
    receiver_ids = [f"R{i}" for i in range(n_receivers)]
    cfg = ChannelConfig(channel_id="ch", senders=sender_ids, receivers=receiver_ids,
                        f_s=f_s, f_r=f_r, capacity=cfg_kwargs.pop("capacity", 16),
                        **cfg_kwargs)
    keys = {nid: crypto.generate_keypair(scheme, nid, b"test")
            for nid in sender_ids + receiver_ids}
    pubs = {nid: k.public for nid, k in keys.items()}
    s_cls = RcSenderEndpoint if variant == "rc" else ScSenderEndpoint
    r_cls = RcReceiverEndpoint if variant == "rc" else ScReceiverEndpoint

    def make(nid, region, cls):
        host = EndpointHost(sim, nid, region)
        ep = cls(cfg, nid, SigningContext(keys[nid], counters), pubs, counters,
                 sim, host.send_raw)
        host.endpoint = ep
        return ep

    senders = [make(nid, "tx", s_cls) for nid in sender_ids]
    receivers = [make(nid, "rx", r_cls) for nid in receiver_ids]
    sim.counters = counters
    return sim, senders, receivers


@pytest.fixture(params=["rc", "sc"])
def channel_variant(request):
    return request.param
