"""Metrics over a completed run: latency percentiles per client region and
operation kind, throughput, traffic by link scope, authentication-operation
counts, overhead ratio, and an optional analytic CPU-throughput model driven
by a per-operation crypto cost table.
"""

from __future__ import annotations

import statistics

from .messages import ADMIN, STRONG_READ, WEAK_READ, WRITE

KIND_NAMES = {WRITE: "write", STRONG_READ: "strong", WEAK_READ: "weak",
              ADMIN: "admin"}


def percentile(samples: list, frac: float) -> float:
    if not samples:
        return 0.0
    ordered = sorted(samples)
    idx = min(len(ordered) - 1, max(0, round(frac * (len(ordered) - 1))))
    return ordered[idx]


def build_report(cl, scenario=None, violations=None) -> dict:
    """Assemble the run report as a plain JSON-serializable dict."""
    sim, ctx = cl.sim, cl.ctx
    rows = {}
    payload_bytes = 0
    accepted = 0
    for c, session in sorted(cl.clients.items()):
        for rec in session.history:
            kind = KIND_NAMES[rec["kind"]]
            key = (session.region, kind)
            rows.setdefault(key, []).append(rec["end"] - rec["start"])
            payload_bytes += len(rec["op"])
            accepted += 1
    duration = sim.now
    latency = []
    for (region, kind), samples in sorted(rows.items()):
        latency.append({
            "region": region, "kind": kind, "count": len(samples),
            "p50": round(percentile(samples, 0.50), 4),
            "p90": round(percentile(samples, 0.90), 4),
            "mean": round(statistics.fmean(samples), 4),
            "throughput": round(len(samples) / duration, 6) if duration else 0.0,
        })

    wide = sim.traffic.total("wide")
    intra = sim.traffic.total("intra")
    traffic = {
        "wide_bytes": wide,
        "intra_bytes": intra,
        "wide_msgs": sum(v for (s, _), v in sim.traffic.msgs.items()
                         if s == "wide"),
        "intra_msgs": sum(v for (s, _), v in sim.traffic.msgs.items()
                          if s == "intra"),
        "wide_by_tag": dict(sorted(sim.traffic.by_tag("wide").items())),
        "payload_bytes": payload_bytes,
        "overhead_ratio": round((wide + intra) / payload_bytes, 3)
        if payload_bytes else 0.0,
    }
    counters = ctx.counters.snapshot()
    report = {
        "name": getattr(scenario, "name", "run"),
        "seed": getattr(scenario, "seed", 0),
        "variant": ctx.variant,
        "simulated_ms": round(duration, 3),
        "accepted_ops": accepted,
        "latency": latency,
        "traffic": traffic,
        "auth_ops": counters,
        "violations": list(violations or []),
    }
    cost = getattr(scenario, "crypto_cost", None)
    if cost:
        report["cpu_model"] = cpu_model(counters, traffic, cost)
    return report


def cpu_model(counters: dict, traffic: dict, cost: dict) -> dict:
    """Analytic CPU-bound throughput estimate from instruction counts.

    Simulated time models the network only; this converts the recorded
    authentication-operation counts into CPU milliseconds using the supplied
    per-operation cost table and derives the message rate the deployment
    could sustain if authentication were the bottleneck.
    """
    cpu_ms = (counters.get("sign", 0) * cost.get("sign", 0.0)
              + counters.get("verify", 0) * cost.get("verify", 0.0)
              + counters.get("mac", 0) * cost.get("mac", 0.0)
              + counters.get("mac_verify", 0) * cost.get("mac_verify", 0.0))
    msgs = traffic["wide_msgs"] + traffic["intra_msgs"]
    return {
        "cpu_ms": round(cpu_ms, 3),
        "messages": msgs,
        "sign_ops_per_message": round(counters.get("sign", 0) / msgs, 6)
        if msgs else 0.0,
        "messages_per_cpu_second": round(msgs / cpu_ms * 1000.0, 1)
        if cpu_ms else float("inf"),
    }


def latency_row(report: dict, region: str, kind: str) -> dict | None:
    for row in report["latency"]:
        if row["region"] == region and row["kind"] == kind:
            return row
    return None


def to_csv(report: dict) -> str:
    """Latency rows as delimited text (stable column order)."""
    import csv
    import io
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["region", "kind", "count", "p50_ms", "p90_ms", "mean_ms",
                "throughput_per_ms"])
    for row in report["latency"]:
        w.writerow([row["region"], row["kind"], row["count"], row["p50"],
                    row["p90"], row["mean"], row["throughput"]])
    return buf.getvalue()
