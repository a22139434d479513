"""Deployment builder: instantiates the agreement group, execution groups,
channels, and client sessions on one simulator from a compact description.
Used by the scenario runner and by the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import crypto
from .agreement_node import AgreementReplica
from .client import ClientSession
from .execution_node import ExecutionReplica
from .sim import Simulator, Topology


@dataclass
class Context:
    """Shared wiring and tunables handed to every node."""

    sim: Simulator
    master: bytes
    counters: crypto.OpCounters
    scheme: str
    f_a: int
    f_e: int
    agreement_ids: list
    agreement_region: str
    initial_groups: dict      # gid -> (region, [replica ids]); live at start
    groups: dict              # directory of every group incl. later additions
    clients: dict             # c -> region
    keys: dict
    pubs: dict
    z: int
    variant: str = "rc"
    k_a: int = 16
    k_e: int = 16
    ag_win: int = 64
    commit_capacity: int = 128
    request_capacity: int = 16
    batching: bool = False
    batch_window: float = 1.0
    max_batch: int = 128
    batch_limit: int = 16
    offload_verification: bool = True
    cert_forwarding: bool = True
    verify_batch_cap: int = 256
    request_timeout: float = 400.0
    weak_read_timeout: float = 0.8          # replica-side defer: 2x intra RTT
    client_timeout: float = 420.0
    weak_read_client_timeout: float = 4.0
    client_retry_budget: int = 3
    gossip_period: float = 5.0
    forward_wait: float = 1.0

    def client_node(self, c: int) -> str:
        return f"c{c}"


@dataclass
class Cluster:
    sim: Simulator
    ctx: Context
    agreement: list
    execution: dict           # gid -> [ExecutionReplica]
    clients: dict             # c -> ClientSession

    def exec_replicas(self):
        for replicas in self.execution.values():
            yield from replicas

    def add_execution_group(self, gid: str):
        """Instantiate the replicas of a pending group (pre-AddGroup)."""
        region, members = self.ctx.groups[gid]
        self.execution[gid] = [
            ExecutionReplica(self.ctx, m, gid, region, members) for m in members]
        return self.execution[gid]

    def run_until_idle(self, horizon: float) -> float:
        return self.sim.run_until(
            cond=lambda: all(not s.busy for s in self.clients.values()),
            time=horizon)


def build(latency: dict, agreement_region: str, groups: dict,
          clients: dict, f_a: int = 1, f_e: int = 1, seed: int = 0,
          scheme: str = "fake", variant: str = "rc",
          pending_groups: dict | None = None, z: int | None = None,
          trace: bool = False, topology_kwargs: dict | None = None,
          **overrides) -> Cluster:
    """groups: gid -> region (live at start); clients: c -> (region, group).

    pending_groups: gid -> region; replicas are created and waiting but the
    group only starts serving after an agreed AddGroup request.
    """
    topo = Topology(latency=dict(latency), **(topology_kwargs or {}))
    sim = Simulator(topo, seed=seed, trace=trace)
    counters = crypto.OpCounters()
    master = b"deployment-%d" % seed

    n_a, n_e = 3 * f_a + 1, 2 * f_e + 1
    agreement_ids = [f"A{i}" for i in range(n_a)]
    initial = {gid: (region, [f"{gid}.{i}" for i in range(n_e)])
               for gid, region in sorted(groups.items())}
    directory = dict(initial)
    for gid, region in sorted((pending_groups or {}).items()):
        directory[gid] = (region, [f"{gid}.{i}" for i in range(n_e)])

    node_ids = list(agreement_ids)
    for _, members in directory.values():
        node_ids.extend(members)
    node_ids.extend(f"c{c}" for c in clients)

    keys = {nid: crypto.generate_keypair(scheme, nid, master) for nid in node_ids}
    pubs = {nid: k.public for nid, k in keys.items()}

    if z is None:
        z = 0 if len(initial) <= 2 else 1
    max_ow = topo.max_one_way()
    defaults = {
        "request_timeout": max(200.0, 8 * max_ow),
        "client_timeout": max(50.0, 4 * (2 * max_ow + 25 * topo.intra_latency)),
        "weak_read_timeout": 4 * topo.intra_latency,
        "weak_read_client_timeout": max(4.0, 20 * topo.intra_latency),
    }
    defaults.update(overrides)

    ctx = Context(sim=sim, master=master, counters=counters, scheme=scheme,
                  f_a=f_a, f_e=f_e, agreement_ids=agreement_ids,
                  agreement_region=agreement_region, initial_groups=initial,
                  groups=directory, clients={c: r for c, (r, _) in clients.items()},
                  keys=keys, pubs=pubs, z=z, variant=variant, **defaults)

    execution = {}
    for gid, (region, members) in directory.items():
        execution[gid] = [ExecutionReplica(ctx, m, gid, region, members)
                          for m in members]
    agreement = [AgreementReplica(ctx, nid) for nid in agreement_ids]
    sessions = {c: ClientSession(ctx, c, region, group)
                for c, (region, group) in sorted(clients.items())}
    return Cluster(sim=sim, ctx=ctx, agreement=agreement,
                   execution=execution, clients=sessions)
