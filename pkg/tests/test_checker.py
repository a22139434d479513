"""The consistency oracles must accept real runs and reject corrupted ones."""

import pytest

from geobft import checker, cluster, kvapp, wire

LAT = {("va", "ag"): 10.0, ("or", "ag"): 30.0, ("va", "or"): 35.0}


def run_workload(seed=0, n=10, **kw):
    cl = cluster.build(LAT, "ag", {"E0": "va", "E1": "or"},
                       {1: ("va", "E0"), 2: ("or", "E1")}, seed=seed, **kw)

    def drive(session, prefix):
        def issue(i=0):
            if i >= n:
                return
            if i % 3 == 2:
                session.weak_read(kvapp.get_op(b"k%d" % (i % 2)),
                                  lambda r, i=i: issue(i + 1))
            elif i % 3 == 1:
                session.strong_read(kvapp.get_op(b"k%d" % (i % 2)),
                                    lambda r, i=i: issue(i + 1))
            else:
                session.write(kvapp.put_op(b"k%d" % (i % 2), prefix + b"%d" % i),
                              lambda r, i=i: issue(i + 1))
        issue()

    drive(cl.clients[1], b"a")
    drive(cl.clients[2], b"b")
    cl.run_until_idle(120000.0)
    cl.sim.run_until(time=cl.sim.now + 500.0)
    return cl


def test_clean_run_passes_all_checks():
    cl = run_workload(seed=21)
    assert checker.check_convergence(cl) == []
    history = checker.collect_history(cl)
    assert len(history) == 20
    assert checker.check_history(history) == []


def test_corrupted_result_detected():
    cl = run_workload(seed=22)
    history = checker.collect_history(cl)
    victim = next(r for r in history if r["effective_kind"] == 1)
    victim["result"] = wire.encode((kvapp.RES_VALUE, b"bogus"))
    assert checker.check_history(history)


def test_real_time_violation_detected():
    cl = run_workload(seed=23)
    history = checker.collect_history(cl)
    ordered = sorted((r for r in history if r["effective_kind"] == 0),
                     key=lambda r: r["s_write"])
    first, last = ordered[0], ordered[-1]
    first["s_write"], last["s_write"] = last["s_write"], first["s_write"]
    assert checker.check_history(history)


def test_weak_read_floor_violation_detected():
    cl = run_workload(seed=24)
    history = checker.collect_history(cl)
    weak = [r for r in history
            if r["kind"] == 2 and r["effective_kind"] == 2 and r["s_update"] > 0]
    if not weak:
        pytest.skip("no completed weak reads in this run")
    # claim the read observed a state far below its session floor
    victim = weak[-1]
    victim["s_update"] = 0
    victim["result"] = wire.encode((kvapp.RES_VALUE, b"stale"))
    assert checker.check_history(history)


def test_divergent_replica_detected():
    cl = run_workload(seed=25)
    rep = cl.execution["E0"][1]
    rep.kv.state[b"rogue"] = (b"x", 999)
    assert checker.check_convergence(cl)
    assert checker.check_convergence(cl, exclude={rep.node_id}) == []


def test_exhaustive_oracle():
    lin = [
        {"effective_kind": 0, "op": kvapp.put_op(b"k", b"1"),
         "result": wire.encode((kvapp.RES_OK, b"")), "start": 0, "end": 1},
        {"effective_kind": 1, "op": kvapp.get_op(b"k"),
         "result": wire.encode((kvapp.RES_VALUE, b"1")), "start": 2, "end": 3},
    ]
    assert checker.is_linearizable(lin)
    not_lin = [dict(lin[0]),
               {**lin[1], "result": wire.encode((kvapp.RES_ABSENT, b""))}]
    assert not checker.is_linearizable(not_lin)
    # overlapping ops: either order acceptable
    overlap = [dict(lin[0], start=0, end=5),
               {**lin[1], "start": 1, "end": 2,
                "result": wire.encode((kvapp.RES_ABSENT, b""))}]
    assert checker.is_linearizable(overlap)


def test_oracle_agrees_with_slot_check_on_real_run():
    cl = run_workload(seed=26, n=4)
    history = checker.collect_history(cl)
    assert checker.check_history(history) == []
    assert checker.is_linearizable(history)
