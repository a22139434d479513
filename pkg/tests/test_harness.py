"""Scenario parsing, the runner, report schema, and the CLI."""

import json

import pytest

from geobft import cli, metrics, runner, scenario

BASE = {
    "name": "t",
    "seed": 3,
    "duration": 60000.0,
    "agreement_region": "va",
    "topology": {"links": [
        {"a": "va", "b": "or", "one_way": 35.0},
        {"a": "va", "b": "ag", "one_way": 10.0},
        {"a": "or", "b": "ag", "one_way": 30.0},
    ]},
    "groups": {"E0": "va", "E1": "or"},
    "clients": [
        {"id": 1, "region": "va", "group": "E0", "ops": 6,
         "mix": {"write": 0.6, "strong": 0.2, "weak": 0.2}},
        {"id": 2, "region": "or", "group": "E1", "ops": 6},
    ],
}


def make(**patch):
    data = json.loads(json.dumps(BASE))
    data.update(patch)
    return data


# -- validation -----------------------------------------------------------


def test_parse_ok():
    scn = scenario.parse(make())
    assert scn.latency[("va", "or")] == 35.0
    assert scn.clients[0].mix["write"] == 0.6
    assert scn.groups == {"E0": "va", "E1": "or"}


@pytest.mark.parametrize("patch,path_frag", [
    ({"variant": "xx"}, "variant"),
    ({"scheme": "sha1"}, "scheme"),
    ({"f_a": 0}, "f_a"),
    ({"groups": {}}, "groups"),
    ({"clients": []}, "clients"),
    ({"tuning": {"commit_capacity": 8, "k_e": 16}}, "tuning.commit_capacity"),
    ({"tuning": {"ag_win": 4, "k_a": 16}}, "tuning.ag_win"),
    ({"tuning": {"bogus": 1}}, "tuning.bogus"),
    ({"crypto_cost": {"sign": -1}}, "crypto_cost.sign"),
])
def test_rejected_configs_name_the_field(patch, path_frag):
    with pytest.raises(scenario.ScenarioError) as e:
        scenario.parse(make(**patch))
    assert path_frag in str(e.value)


def test_unknown_client_group_rejected():
    data = make()
    data["clients"][0]["group"] = "nope"
    with pytest.raises(scenario.ScenarioError, match=r"clients\[0\].group"):
        scenario.parse(data)


def test_partition_requires_end():
    data = make(faults=[{"at": 5.0, "action": "partition", "side": ["ag"]}])
    with pytest.raises(scenario.ScenarioError, match=r"faults\[0\].until"):
        scenario.parse(data)


def test_negative_latency_rejected():
    data = make()
    data["topology"]["links"][0]["one_way"] = -1.0
    with pytest.raises(scenario.ScenarioError, match="one_way"):
        scenario.parse(data)


def test_preset_topology_loads():
    data = make(agreement_region="virginia",
                groups={"E0": "virginia"})
    data["topology"] = {"preset": "five-regions"}
    data["clients"] = [{"id": 1, "region": "virginia", "group": "E0"}]
    scn = scenario.parse(data)
    assert scn.latency[("virginia", "tokyo")] > 0


# -- runner ---------------------------------------------------------------


def test_run_completes_and_checks_pass():
    result = runner.run(scenario.parse(make()))
    assert result.ok
    assert result.report["accepted_ops"] == 12
    assert result.report["violations"] == []


def test_identical_seed_identical_report():
    scn = scenario.parse(make())
    a = runner.run(scn).report
    b = runner.run(scn).report
    assert a == b
    c = runner.run(scn, seed=99).report
    assert c != a


def test_fault_schedule_executes():
    data = make(faults=[
        {"at": 30.0, "action": "crash", "node": "A0"},
        {"at": 10.0, "action": "byzantine", "node": "E0.0",
         "behavior": "corrupt_replies"},
    ])
    result = runner.run(scenario.parse(data))
    assert result.ok
    assert result.cluster.sim.nodes["A0"].crashed


def test_unknown_fault_node_rejected():
    data = make(faults=[{"at": 1.0, "action": "crash", "node": "Z9"}])
    with pytest.raises(ValueError, match="Z9"):
        runner.run(scenario.parse(data))


# -- report schema (golden) ----------------------------------------------


def test_report_schema_stable():
    report = runner.run(scenario.parse(make())).report
    assert sorted(report) == ["accepted_ops", "auth_ops", "latency", "name",
                              "seed", "simulated_ms", "traffic", "variant",
                              "violations"]
    row = report["latency"][0]
    assert sorted(row) == ["count", "kind", "mean", "p50", "p90", "region",
                           "throughput"]
    assert sorted(report["traffic"]) == [
        "intra_bytes", "intra_msgs", "overhead_ratio", "payload_bytes",
        "wide_by_tag", "wide_bytes", "wide_msgs"]
    assert sorted(report["auth_ops"]) == ["mac", "mac_verify", "sign",
                                          "verify"]
    csv_text = metrics.to_csv(report)
    assert csv_text.splitlines()[0] == \
        "region,kind,count,p50_ms,p90_ms,mean_ms,throughput_per_ms"


def test_cpu_model_emitted_with_cost_table():
    data = make(crypto_cost={"sign": 0.03, "verify": 0.1,
                             "mac": 0.001, "mac_verify": 0.001})
    report = runner.run(scenario.parse(data)).report
    assert report["cpu_model"]["cpu_ms"] > 0
    assert report["cpu_model"]["messages_per_cpu_second"] > 0


# -- CLI ------------------------------------------------------------------


def write_scenario(tmp_path, data):
    toml = [f'name = "{data["name"]}"', f'seed = {data["seed"]}',
            f'duration = {data["duration"]}',
            f'agreement_region = "{data["agreement_region"]}"',
            "[groups]"]
    for gid, region in data["groups"].items():
        toml.append(f'{gid} = "{region}"')
    for link in data["topology"]["links"]:
        toml += ["[[topology.links]]", f'a = "{link["a"]}"',
                 f'b = "{link["b"]}"', f'one_way = {link["one_way"]}']
    for c in data["clients"]:
        toml += ["[[clients]]", f'id = {c["id"]}',
                 f'region = "{c["region"]}"', f'group = "{c["group"]}"',
                 f'ops = {c.get("ops", 10)}']
    path = tmp_path / "scn.toml"
    path.write_text("\n".join(toml) + "\n")
    return str(path)


def test_cli_run_and_compare(tmp_path):
    scn_path = write_scenario(tmp_path, make())
    out = tmp_path / "out"
    assert cli.main(["run", scn_path, "--out", str(out)]) == 0
    assert (out / "report.json").exists()
    assert (out / "report.csv").exists()
    assert (out / "latency.png").exists()

    asserts = tmp_path / "asserts.txt"
    asserts.write_text("A.accepted_ops == B.accepted_ops\n"
                       "# comment\n"
                       'latency(A, "va", "write").p50 > 0\n')
    rj = str(out / "report.json")
    assert cli.main(["compare", rj, rj, str(asserts)]) == 0

    asserts.write_text("A.accepted_ops > B.accepted_ops\n")
    assert cli.main(["compare", rj, rj, str(asserts)]) == 1

    asserts.write_text("this is not (valid\n")
    assert cli.main(["compare", rj, rj, str(asserts)]) == 2


def test_cli_rejects_bad_scenario(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('agreement_region = "va"\n')
    assert cli.main(["run", str(path)]) == 2
    assert "groups" in capsys.readouterr().err
