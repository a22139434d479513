"""Scenario runner: build a deployment from a scenario, drive the workload
and fault schedule, run the built-in consistency checkers, and assemble the
metrics report.
"""

from __future__ import annotations

import random
from dataclasses import replace

from . import checker, cluster, crypto, kvapp, metrics
from .agreement_node import request_digest
from .scenario import Scenario
from .sim import Partition


class RunResult:
    def __init__(self, cl, report, violations):
        self.cluster = cl
        self.report = report
        self.violations = violations

    @property
    def ok(self) -> bool:
        return not self.violations


def run(scn: Scenario, seed: int | None = None, trace: bool = False) -> RunResult:
    seed = scn.seed if seed is None else seed
    cl = cluster.build(
        scn.latency, scn.agreement_region, scn.groups,
        {c.id: (c.region, c.group) for c in scn.clients},
        f_a=scn.f_a, f_e=scn.f_e, seed=seed, scheme=scn.scheme,
        variant=scn.variant, z=scn.z,
        pending_groups=scn.pending_groups or None, trace=trace,
        topology_kwargs={"intra_latency": scn.intra_latency,
                         "jitter_frac": scn.jitter_frac},
        **scn.tuning)

    excluded = _schedule_faults(cl, scn)
    pending = _start_workload(cl, scn, seed)
    cl.sim.run_until(cond=lambda: not pending, time=scn.duration)
    # settle so in-flight dissemination reaches every replica before checking
    cl.sim.run_until(time=cl.sim.now + 20 * cl.sim.topology.max_one_way())

    violations = list(checker.check_convergence(cl, exclude=excluded))
    history = [rec for c, session in sorted(cl.clients.items())
               if c not in _byzantine_clients(scn)
               for rec in session.history]
    violations.extend(checker.check_history(history))
    report = metrics.build_report(cl, scenario=replace(scn, seed=seed),
                                  violations=violations)
    return RunResult(cl, report, violations)


# -- workload --------------------------------------------------------------


def _start_workload(cl, scn: Scenario, seed: int) -> set:
    pending = set()
    for spec in scn.clients:
        if spec.ops <= 0:
            continue
        pending.add(spec.id)
        _drive_client(cl, scn, spec, seed, pending)
    return pending


def _drive_client(cl, scn: Scenario, spec, seed: int, pending: set) -> None:
    session = cl.clients[spec.id]
    rng = random.Random((seed << 20) ^ (spec.id * 0x9E3779B1))
    kinds = sorted(spec.mix)
    weights = [spec.mix[k] for k in kinds]

    def issue(i=0):
        if i >= spec.ops:
            pending.discard(spec.id)
            return
        key = b"k%d" % rng.randrange(scn.key_space)
        kind = rng.choices(kinds, weights=weights)[0]
        def done(_reply, i=i):
            if spec.think > 0:
                cl.sim.after(spec.think, lambda: issue(i + 1))
            else:
                issue(i + 1)
        if kind == "write":
            value = (b"%d.%d." % (spec.id, i)).ljust(spec.payload, b"x")
            session.write(kvapp.put_op(key, value), done)
        elif kind == "strong":
            session.strong_read(kvapp.get_op(key), done)
        else:
            session.weak_read(kvapp.get_op(key), done)

    # start via the event queue so fault-schedule entries at t=0 (scheduled
    # earlier) take effect before the first operation is transmitted
    cl.sim.at(0.0, issue)


# -- fault schedule --------------------------------------------------------


def _byzantine_clients(scn: Scenario) -> set:
    out = set()
    for f in scn.faults:
        if f.action == "byzantine" and f.node.startswith("c"):
            try:
                out.add(int(f.node[1:]))
            except ValueError:
                pass
    return out


def _schedule_faults(cl, scn: Scenario) -> set:
    """Install the schedule; returns node ids to exclude from convergence."""
    excluded = set()
    known = set(cl.sim.nodes)
    for i, f in enumerate(scn.faults):
        if f.node and f.node not in known:
            raise ValueError(f"faults[{i}].node: unknown node {f.node!r}")
        if f.action == "crash":
            cl.sim.at(f.at, lambda n=f.node: cl.sim.crash(n))
            excluded.add(f.node)
        elif f.action == "revive":
            cl.sim.at(f.at, lambda n=f.node:
                      setattr(cl.sim.nodes[n], "crashed", False))
            excluded.discard(f.node)
        elif f.action == "partition":
            cl.sim.partitions.append(Partition(
                side_a=frozenset(f.side), start=f.at, end=f.until))
        elif f.action == "byzantine":
            excluded.add(f.node)
            cl.sim.at(f.at, lambda ff=f: _install_byzantine(cl, ff))
    return excluded


def _install_byzantine(cl, f) -> None:
    cl.sim.nodes[f.node].behavior = f.behavior
    if f.behavior == "silent":
        cl.sim.crash(f.node)
        return
    if f.behavior == "corrupt_replies":
        rep = _find_exec(cl, f.node)
        rep.reply_hook = lambda r: replace(
            r, result=b"\xff" + r.result, s_update=r.s_update + 1)
        return
    if f.behavior == "equivocate_requests":
        session = cl.clients[int(f.node[1:])]

        def hook(dst, r):
            twisted = replace(r, op=kvapp.put_op(b"equiv", dst.encode()),
                              sig=b"")
            return replace(twisted, sig=crypto.sign(
                session.key, request_digest(twisted), session.counters))

        session.request_hook = hook
        return
    ag = next(a for a in cl.agreement if a.node_id == f.node)
    if f.behavior == "drop_preprepare":
        ag.consensus.preprepare_hook = lambda dst, pp: None
    elif f.behavior == "equivocate_preprepare":
        others = [a for a in cl.ctx.agreement_ids if a != f.node]
        half = set(others[: len(others) // 2])
        ag.consensus.preprepare_hook = (
            lambda dst, pp: replace(pp, noop=True, batch=[])
            if dst in half else pp)


def _find_exec(cl, node_id: str):
    for rep in cl.exec_replicas():
        if rep.node_id == node_id:
            return rep
    raise ValueError(f"no execution replica named {node_id!r}")
