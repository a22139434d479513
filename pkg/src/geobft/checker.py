"""Consistency oracles over completed runs.

Two independent families of checks:

* replica convergence — every correct execution replica of every live group
  must hold the same application state, and replicas within one group must
  agree on the per-client reply cache;
* client-observed consistency — accepted operations must be explainable by a
  single total order of state mutations (the commit-slot order), respect
  real-time precedence between non-overlapping operations, and weak reads
  must observe a state no older than the issuing session's floor.

For very small histories an exhaustive search is also provided that validates
linearizability of writes and strongly consistent reads without trusting the
slot numbers reported by replicas.
"""

from __future__ import annotations

from dataclasses import replace
from itertools import permutations

from . import kvapp, wire
from .messages import STRONG_READ, WEAK_READ, WRITE


def check_convergence(cl, exclude=()) -> list:
    """Cross-replica state checks; returns a list of violation strings.

    exclude: node ids to skip (crashed or deliberately faulty replicas).
    """
    violations = []
    live = set()
    for ag in cl.agreement:
        live |= set(ag.registry)
    app_digests = {}
    for gid, replicas in sorted(cl.execution.items()):
        if gid not in live:
            continue
        per_group_u = {}
        for rep in replicas:
            if rep.node_id in exclude or cl.sim.nodes[rep.node_id].crashed:
                continue
            app_digests[rep.node_id] = rep.kv.snapshot()
            per_group_u[rep.node_id] = sorted(
                (c, replace(r, replica="")) for c, r in rep.u.items())
        if len({wire.encode(u) for u in per_group_u.values()}) > 1:
            violations.append(f"reply caches diverge within group {gid}")
    # application state must agree across groups too, but replicas may be at
    # different commit positions; compare only replicas at the same position
    by_pos = {}
    for gid, replicas in sorted(cl.execution.items()):
        if gid not in live:
            continue
        for rep in replicas:
            if rep.node_id in exclude or cl.sim.nodes[rep.node_id].crashed:
                continue
            by_pos.setdefault(rep.s_n, {})[rep.node_id] = app_digests[rep.node_id]
    for pos, snaps in sorted(by_pos.items()):
        if len(set(snaps.values())) > 1:
            violations.append(
                f"application state diverges at commit position {pos}: "
                f"{sorted(snaps)}")
    return violations


def collect_history(cl) -> list:
    """All accepted operations across clients, as checkable records."""
    out = []
    for c, session in sorted(cl.clients.items()):
        out.extend(session.history)
    return out


def check_history(history: list) -> list:
    """Slot-order replay check over accepted operations.

    Returns a list of violation strings; empty means the history is
    explainable by the commit order the replicas reported.
    """
    violations = []
    ordered = [r for r in history
               if r["effective_kind"] in (WRITE, STRONG_READ)]
    ordered.sort(key=lambda r: (r["s_write"], r["c"], r["t_c"]))

    # real-time precedence: if A completed before B started, A's slot must
    # not come after B's
    done = sorted(ordered, key=lambda r: r["end"])
    for r in sorted(ordered, key=lambda r: r["start"]):
        prior = [p for p in done if p["end"] <= r["start"]]
        if prior and max(p["s_write"] for p in prior) > r["s_write"]:
            violations.append(
                f"real-time order violated: client {r['c']} t_c={r['t_c']} "
                f"at slot {r['s_write']} follows a later slot")

    # per-client: t_c strictly increasing implies slot non-decreasing
    per_client = {}
    for r in ordered:
        per_client.setdefault(r["c"], []).append(r)
    for c, recs in per_client.items():
        recs.sort(key=lambda r: r["t_c"])
        slots = [r["s_write"] for r in recs]
        if slots != sorted(slots):
            violations.append(f"client {c}: slots not monotone in t_c")

    # replay in slot order; ties within one slot (batched entries) are
    # resolved by trying every order of the tied operations
    store = kvapp.KvStore()
    versions = {}  # key -> [(s, value-or-None)]
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j]["s_write"] == ordered[i]["s_write"]:
            j += 1
        tied = ordered[i:j]
        ok = _replay_tied(store, tied, versions)
        if not ok:
            s = tied[0]["s_write"]
            violations.append(
                f"no execution order of slot {s} explains the results of "
                f"{[(r['c'], r['t_c']) for r in tied]}")
            for r in tied:  # apply anyway so later checks are meaningful
                _apply(store, r, versions)
        i = j

    violations.extend(_check_weak_reads(history, versions))
    return violations


def _apply(store, rec, versions):
    store.execute(rec["op"], rec["s_write"])
    op = wire.decode(rec["op"])
    if isinstance(op, tuple) and op and op[0] in (kvapp.OP_PUT, kvapp.OP_DELETE):
        key = op[1]
        value = op[2] if op[0] == kvapp.OP_PUT else None
        versions.setdefault(key, []).append((rec["s_write"], value))


def _replay_tied(store, tied, versions) -> bool:
    if len(tied) > 6:
        orders = [tied]  # permutation search is for small batches only
    else:
        orders = list(permutations(tied))
    for order in orders:
        trial = kvapp.KvStore()
        trial.apply(store.snapshot())
        good = True
        for rec in order:
            result, s_update = trial.execute(rec["op"], rec["s_write"])
            if result != rec["result"] or (
                    rec["effective_kind"] == STRONG_READ
                    and s_update != rec["s_update"]):
                good = False
                break
        if good:
            for rec in order:
                _apply(store, rec, versions)
            return True
    return False


def _check_weak_reads(history, versions) -> list:
    violations = []
    weak = [r for r in history
            if r["kind"] == WEAK_READ and r["effective_kind"] == WEAK_READ]
    for r in weak:
        op = wire.decode(r["op"])
        if not (isinstance(op, tuple) and op and op[0] == kvapp.OP_GET):
            continue
        key = op[1]
        hist = versions.get(key, [])
        tag, payload = kvapp.decode_result(r["result"])
        if r["s_update"] == 0:
            if tag != kvapp.RES_ABSENT and hist and hist[0][0] <= r["s_min"]:
                violations.append(
                    f"weak read (client {r['c']}, t_c={r['t_c']}) reports an "
                    f"untouched key that was written before its floor")
            continue
        match = [v for s, v in hist if s == r["s_update"]]
        if not match:
            violations.append(
                f"weak read (client {r['c']}, t_c={r['t_c']}) cites unknown "
                f"update slot {r['s_update']} for key {key!r}")
            continue
        value = match[0]
        expected = ((kvapp.RES_ABSENT, b"") if value is None
                    else (kvapp.RES_VALUE, value))
        if (tag, payload) != expected:
            violations.append(
                f"weak read (client {r['c']}, t_c={r['t_c']}) value does not "
                f"match the state at slot {r['s_update']}")
        # session floor: must not observe a state older than the floor
        floor_update = max((s for s, _ in hist if s <= r["s_min"]), default=0)
        if r["s_update"] < floor_update:
            violations.append(
                f"weak read (client {r['c']}, t_c={r['t_c']}) observed slot "
                f"{r['s_update']} below its session floor update "
                f"{floor_update}")
    return violations


# -- exhaustive oracle for tiny histories ---------------------------------


def is_linearizable(history: list, limit: int = 8) -> bool:
    """Exhaustive search ignoring reported slots; small histories only."""
    ops = [r for r in history if r["effective_kind"] in (WRITE, STRONG_READ)]
    if len(ops) > limit:
        raise ValueError(f"history too large for exhaustive search ({len(ops)})")

    def precedes(a, b):
        return a["end"] < b["start"]

    def search(remaining, store_state):
        if not remaining:
            return True
        for idx, cand in enumerate(remaining):
            if any(precedes(o, cand) for o in remaining if o is not cand):
                continue
            store = kvapp.KvStore()
            store.apply(store_state)
            result, _ = store.execute(cand["op"], 1)
            if result != cand["result"]:
                continue
            if search(remaining[:idx] + remaining[idx + 1:], store.snapshot()):
                return True
        return False

    return search(ops, kvapp.KvStore().snapshot())
