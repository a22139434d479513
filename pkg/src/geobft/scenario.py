"""Scenario configuration: TOML schema, validation, and latency presets.

A scenario fully determines a run together with a seed: topology, group
placement, protocol tunables, workload, and fault schedule.  Validation
errors carry the offending field path so CI failures are actionable.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ScenarioError(ValueError):
    """Configuration rejected; message includes the field path."""


# Approximate one-way wide-area delays (simulated ms) between the named
# regions, sourced from public RTT tables; scenario inputs, not measurements.
PRESET_REGIONS = ["virginia", "oregon", "ireland", "tokyo", "saopaulo"]
PRESET_LATENCY = {
    ("virginia", "oregon"): 35.0,
    ("virginia", "ireland"): 40.0,
    ("virginia", "tokyo"): 75.0,
    ("virginia", "saopaulo"): 60.0,
    ("oregon", "ireland"): 65.0,
    ("oregon", "tokyo"): 50.0,
    ("oregon", "saopaulo"): 90.0,
    ("ireland", "tokyo"): 110.0,
    ("ireland", "saopaulo"): 95.0,
    ("tokyo", "saopaulo"): 130.0,
}

VARIANTS = ("rc", "sc")
SCHEMES = ("fake", "ed25519", "rsa")
FAULT_ACTIONS = ("crash", "revive", "partition", "byzantine")
BYZANTINE_BEHAVIORS = ("silent", "corrupt_replies", "equivocate_requests",
                       "equivocate_preprepare", "drop_preprepare")

# tunables forwarded verbatim to the deployment context
TUNING_FIELDS = {
    "k_a": int, "k_e": int, "ag_win": int, "commit_capacity": int,
    "request_capacity": int, "batching": bool, "batch_window": float,
    "max_batch": int, "batch_limit": int, "offload_verification": bool,
    "cert_forwarding": bool, "verify_batch_cap": int,
    "request_timeout": float, "weak_read_timeout": float,
    "client_timeout": float, "weak_read_client_timeout": float,
    "client_retry_budget": int, "gossip_period": float, "forward_wait": float,
}


@dataclass
class ClientSpec:
    id: int
    region: str
    group: str
    ops: int = 10
    mix: dict = field(default_factory=lambda: {"write": 1.0})
    payload: int = 32
    think: float = 0.0


@dataclass
class FaultSpec:
    at: float
    action: str
    node: str = ""
    side: list = field(default_factory=list)
    until: float = 0.0
    behavior: str = ""


@dataclass
class Scenario:
    name: str
    seed: int
    duration: float
    variant: str
    scheme: str
    f_a: int
    f_e: int
    z: int | None
    agreement_region: str
    groups: dict                 # gid -> region
    pending_groups: dict
    latency: dict                # (region a, region b) -> one-way ms
    intra_latency: float
    jitter_frac: float
    clients: list                # [ClientSpec]
    faults: list                 # [FaultSpec]
    tuning: dict
    crypto_cost: dict            # op kind -> simulated ms, empty = free
    key_space: int = 8


def _err(path: str, why: str):
    raise ScenarioError(f"{path}: {why}")


def _get(table: dict, key: str, typ, default=None, required=False, path=""):
    where = f"{path}.{key}" if path else key
    if key not in table:
        if required:
            _err(where, "required field missing")
        return default
    v = table[key]
    if typ is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, typ) or (typ is int and isinstance(v, bool)):
        _err(where, f"expected {typ.__name__}, got {type(v).__name__}")
    return v


def load(path: str) -> Scenario:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return parse(data)


def parse(data: dict) -> Scenario:
    name = _get(data, "name", str, default="scenario")
    seed = _get(data, "seed", int, default=0)
    duration = _get(data, "duration", float, default=60000.0)
    variant = _get(data, "variant", str, default="rc")
    if variant not in VARIANTS:
        _err("variant", f"must be one of {VARIANTS}")
    scheme = _get(data, "scheme", str, default="fake")
    if scheme not in SCHEMES:
        _err("scheme", f"must be one of {SCHEMES}")
    f_a = _get(data, "f_a", int, default=1)
    f_e = _get(data, "f_e", int, default=1)
    if f_a < 1:
        _err("f_a", "must be >= 1")
    if f_e < 1:
        _err("f_e", "must be >= 1")
    z = _get(data, "z", int, default=None)

    topo = _get(data, "topology", dict, default={}, path="")
    intra = _get(topo, "intra_latency", float, default=0.2, path="topology")
    jitter = _get(topo, "jitter_frac", float, default=0.02, path="topology")
    latency: dict = {}
    preset = _get(topo, "preset", str, default="", path="topology")
    if preset:
        if preset != "five-regions":
            _err("topology.preset", 'the only known preset is "five-regions"')
        latency.update(PRESET_LATENCY)
    for i, link in enumerate(_get(topo, "links", list, default=[],
                                  path="topology")):
        p = f"topology.links[{i}]"
        if not isinstance(link, dict):
            _err(p, "expected a table")
        a = _get(link, "a", str, required=True, path=p)
        b = _get(link, "b", str, required=True, path=p)
        ow = _get(link, "one_way", float, required=True, path=p)
        if ow < 0:
            _err(f"{p}.one_way", "latency must be >= 0")
        latency[(a, b)] = ow
    regions = {r for pair in latency for r in pair}

    agreement_region = _get(data, "agreement_region", str, required=True)
    groups = _get(data, "groups", dict, default={})
    pending = _get(data, "pending_groups", dict, default={})
    if not groups:
        _err("groups", "at least one execution group is required")
    for gid, region in {**groups, **pending}.items():
        if not isinstance(region, str):
            _err(f"groups.{gid}", "region must be a string")
        if region != agreement_region and region not in regions:
            _err(f"groups.{gid}", f"region {region!r} not in the topology")
    if regions and agreement_region not in regions:
        _err("agreement_region", f"{agreement_region!r} not in the topology")

    clients = []
    seen_ids = set()
    for i, entry in enumerate(_get(data, "clients", list, default=[])):
        p = f"clients[{i}]"
        if not isinstance(entry, dict):
            _err(p, "expected a table")
        cid = _get(entry, "id", int, required=True, path=p)
        if cid in seen_ids:
            _err(f"{p}.id", f"duplicate client id {cid}")
        seen_ids.add(cid)
        region = _get(entry, "region", str, required=True, path=p)
        group = _get(entry, "group", str, required=True, path=p)
        if group not in groups and group not in pending:
            _err(f"{p}.group", f"unknown group {group!r}")
        mix = _get(entry, "mix", dict, default={"write": 1.0}, path=p)
        for k, v in mix.items():
            if k not in ("write", "strong", "weak"):
                _err(f"{p}.mix.{k}", "must be write/strong/weak")
            if not isinstance(v, (int, float)) or v < 0:
                _err(f"{p}.mix.{k}", "must be a non-negative number")
        if not any(v > 0 for v in mix.values()):
            _err(f"{p}.mix", "all weights are zero")
        clients.append(ClientSpec(
            id=cid, region=region, group=group,
            ops=_get(entry, "ops", int, default=10, path=p),
            mix=mix,
            payload=_get(entry, "payload", int, default=32, path=p),
            think=_get(entry, "think", float, default=0.0, path=p)))
    if not clients:
        _err("clients", "at least one client is required")

    faults = []
    for i, entry in enumerate(_get(data, "faults", list, default=[])):
        p = f"faults[{i}]"
        if not isinstance(entry, dict):
            _err(p, "expected a table")
        action = _get(entry, "action", str, required=True, path=p)
        if action not in FAULT_ACTIONS:
            _err(f"{p}.action", f"must be one of {FAULT_ACTIONS}")
        spec = FaultSpec(
            at=_get(entry, "at", float, required=True, path=p),
            action=action,
            node=_get(entry, "node", str, default="", path=p),
            side=_get(entry, "side", list, default=[], path=p),
            until=_get(entry, "until", float, default=0.0, path=p),
            behavior=_get(entry, "behavior", str, default="", path=p))
        if action in ("crash", "revive", "byzantine") and not spec.node:
            _err(f"{p}.node", f"{action} requires a node id")
        if action == "partition":
            if not spec.side:
                _err(f"{p}.side", "partition requires a region list")
            if spec.until <= spec.at:
                _err(f"{p}.until", "partition must end after it starts")
        if action == "byzantine" and spec.behavior not in BYZANTINE_BEHAVIORS:
            _err(f"{p}.behavior", f"must be one of {BYZANTINE_BEHAVIORS}")
        faults.append(spec)

    tuning = {}
    for k, v in _get(data, "tuning", dict, default={}).items():
        if k not in TUNING_FIELDS:
            _err(f"tuning.{k}", "unknown tunable")
        typ = TUNING_FIELDS[k]
        if typ is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if not isinstance(v, typ) or (typ is int and isinstance(v, bool)):
            _err(f"tuning.{k}", f"expected {typ.__name__}")
        tuning[k] = v
    k_e = tuning.get("k_e", 16)
    capacity = tuning.get("commit_capacity", 128)
    if capacity <= k_e:
        _err("tuning.commit_capacity",
             f"commit subchannel capacity ({capacity}) must exceed the "
             f"execution checkpoint interval k_e ({k_e})")
    k_a = tuning.get("k_a", 16)
    ag_win = tuning.get("ag_win", 64)
    if ag_win < k_a:
        _err("tuning.ag_win", f"pacing window ({ag_win}) must be >= k_a ({k_a})")

    cost = {}
    for k, v in _get(data, "crypto_cost", dict, default={}).items():
        if k not in ("sign", "verify", "mac", "mac_verify"):
            _err(f"crypto_cost.{k}", "unknown operation kind")
        if not isinstance(v, (int, float)) or v < 0:
            _err(f"crypto_cost.{k}", "cost must be a non-negative number")
        cost[k] = float(v)

    return Scenario(
        name=name, seed=seed, duration=duration, variant=variant,
        scheme=scheme, f_a=f_a, f_e=f_e, z=z,
        agreement_region=agreement_region, groups=dict(groups),
        pending_groups=dict(pending), latency=latency, intra_latency=intra,
        jitter_frac=jitter, clients=clients, faults=faults, tuning=tuning,
        crypto_cost=cost,
        key_space=_get(data, "key_space", int, default=8))
