import json

import pytest
from click.testing import CliRunner

from dopplan.cli import main
from dopplan.plans import parse_plan
from dopplan.scaling import ScalabilityModel

from test_service import hw_doc

PLAN_3T = ("agg(join(join(scan(A, rows=3e6), scan(B, rows=2e6), rows=1e6,"
           " on='A.x=B.y'), scan(C, rows=1e6), rows=5e5), rows=10)")


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def files(tmp_path):
    """Common fixture files; returns a dict of paths."""
    paths = {}

    def write(name, content):
        p = tmp_path / name
        p.write_text(content if isinstance(content, str)
                     else json.dumps(content, indent=2))
        paths[name] = str(p)
        return str(p)

    write("hw.json", hw_doc(morsel=1e4))
    write("sla.json", {"mode": "sla", "latency_s": 60.0, "dop_max": 256})
    write("tight.json", {"mode": "sla", "latency_s": 0.25, "dop_max": 256})
    write("capped.json", {"mode": "sla", "latency_s": 0.25, "dop_max": 4})
    write("plan.txt", "agg(scan(T, rows=6e9), rows=1)")
    write("plan3t.txt", PLAN_3T)
    plan = parse_plan("agg(scan(T, rows=1e6), rows=1)")
    write("scenario.json", {
        "plan": "agg(scan(T, rows=1e6), rows=1)",
        "true_rows": {op: node.est_out_rows for op, node in plan.operators.items()},
        "seed": 0,
    })
    blowup = {op: node.est_out_rows for op, node in plan.operators.items()}
    blowup[plan.root] = 1.0
    for op, node in plan.operators.items():
        if node.kind == "TableScan":
            blowup[op] = 4e6
    write("scenario_blowup.json", {
        "plan": "agg(scan(T, rows=1e6), rows=1)",
        "true_rows": blowup, "seed": 0,
    })
    paths["tmp"] = str(tmp_path)
    paths["out"] = str(tmp_path / "out")
    paths["state"] = str(tmp_path / "state.json")
    return paths


def test_calibrate_writes_profile(runner, files, tmp_path):
    model = ScalabilityModel("TableScan", 1e6, 0.1, 0.0)
    samples = [{"op_kind": "TableScan", "dop": d, "rows": 1e6,
                "measured_seconds": 1e6 / model.throughput(d)} for d in (1, 2, 4)]
    samples_file = tmp_path / "samples.json"
    samples_file.write_text(json.dumps(samples))
    result = runner.invoke(main, ["calibrate", str(samples_file),
                                  "--out", files["out"]])
    assert result.exit_code == 0, result.output
    profile = json.loads((tmp_path / "out" / "hw_profile.json").read_text())
    fitted = {m["op_kind"]: m for m in profile["models"]}
    assert fitted["TableScan"]["sigma"] == pytest.approx(0.1, rel=1e-6)


def test_plan_command_feasible(runner, files, tmp_path):
    result = runner.invoke(main, ["plan", files["plan.txt"],
                                  "--constraint", files["sla.json"],
                                  "--hw", files["hw.json"],
                                  "--out", files["out"]])
    assert result.exit_code == 0, result.output
    doc = json.loads((tmp_path / "out" / "plan_result.json").read_text())
    assert doc["assignment"]["dops"] == {"0": 100}
    assert doc["schema_version"] == 1


def test_plan_command_infeasible_exits_2(runner, files, tmp_path):
    (tmp_path / "impossible.json").write_text(
        json.dumps({"mode": "sla", "latency_s": 0.001, "dop_max": 4}))
    result = runner.invoke(main, ["plan", files["plan.txt"],
                                  "--constraint", str(tmp_path / "impossible.json"),
                                  "--hw", files["hw.json"], "--out", files["out"]])
    assert result.exit_code == 2
    assert "INFEASIBLE" in result.output


def test_plan_command_bad_plan_exits_1(runner, files, tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("scan(T rows=1)")
    result = runner.invoke(main, ["plan", str(bad),
                                  "--constraint", files["sla.json"],
                                  "--hw", files["hw.json"], "--out", files["out"]])
    assert result.exit_code == 1
    assert "line 1" in result.output


def test_run_fixpoint_exit_zero(runner, files, tmp_path):
    result = runner.invoke(main, ["run", files["scenario.json"],
                                  "--constraint", files["tight.json"],
                                  "--hw", files["hw.json"],
                                  "--state", files["state"],
                                  "--out", files["out"]])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "out" / "run_report.json").read_text())
    assert report["report"]["resize_events"] == []
    assert (tmp_path / "out" / "run_timeline.csv").read_text().startswith("time_s,")


def test_run_recovers_from_blowup(runner, files, tmp_path):
    result = runner.invoke(main, ["run", files["scenario_blowup.json"],
                                  "--constraint", files["tight.json"],
                                  "--hw", files["hw.json"],
                                  "--state", files["state"],
                                  "--out", files["out"]])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "out" / "run_report.json").read_text())
    assert report["report"]["replans"] == 1
    assert report["report"]["sla_met"] is True


def test_run_constraint_miss_exits_2(runner, files):
    result = runner.invoke(main, ["run", files["scenario_blowup.json"],
                                  "--constraint", files["capped.json"],
                                  "--hw", files["hw.json"],
                                  "--state", files["state"],
                                  "--out", files["out"]])
    assert result.exit_code == 2
    assert "MISSED" in result.output


def test_run_outputs_byte_identical(runner, files, tmp_path):
    for sub in ("a", "b"):
        result = runner.invoke(main, ["run", files["scenario_blowup.json"],
                                      "--constraint", files["tight.json"],
                                      "--hw", files["hw.json"],
                                      "--state", files["state"],
                                      "--out", str(tmp_path / sub)])
        assert result.exit_code == 0
    for name in ("run_report.json", "run_timeline.csv"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_frontier_writes_csv(runner, files, tmp_path):
    result = runner.invoke(main, ["frontier", files["plan.txt"],
                                  "--hw", files["hw.json"],
                                  "--sla", "6000", "--sla", "600", "--sla", "600",
                                  "--state", files["state"],
                                  "--out", files["out"]])
    assert result.exit_code == 0, result.output
    csv = (tmp_path / "out" / "frontier.csv").read_text()
    assert csv.startswith("latency_s,dollars,variant_index,dops")
    assert len(csv.strip().splitlines()) >= 2


def test_frontier_all_infeasible_warns_exit_zero(runner, files, tmp_path):
    result = runner.invoke(main, ["frontier", files["plan.txt"],
                                  "--hw", files["hw.json"],
                                  "--sla", "0.001", "--dop-max", "4",
                                  "--state", files["state"],
                                  "--out", files["out"]])
    assert result.exit_code == 0
    assert "infeasible" in result.output
    csv = (tmp_path / "out" / "frontier.csv").read_text()
    assert csv.strip().splitlines() == ["latency_s,dollars,variant_index,dops"]


def _trace_lines(n=60, template="t1"):
    return "\n".join(json.dumps({
        "query_id": f"q{i}", "template_id": template, "timestamp_s": i * 3600.0,
        "operators": [{"op_kind": "HashProbe", "attribute_refs": ["A.x", "B.y"],
                       "actual_rows": 1e5, "duration_s": 1.0, "dop": 2}],
    }) for i in range(n))


def test_ingest_round_trip_and_dedup(runner, files, tmp_path):
    trace = tmp_path / "trace.ndjson"
    trace.write_text(_trace_lines())
    summary = tmp_path / "summary.json"
    result = runner.invoke(main, ["ingest", str(trace), "--summary", str(summary)])
    assert result.exit_code == 0, result.output
    first = summary.read_bytes()
    result = runner.invoke(main, ["ingest", str(trace), "--summary", str(summary)])
    assert result.exit_code == 0
    assert "duplicates 60" in result.output
    assert summary.read_bytes() == first  # idempotent by query_id


def _advise_setup(tmp_path, files, refresh=0.0, batches=0.0):
    trace = tmp_path / "trace.ndjson"
    trace.write_text(_trace_lines())
    summary = tmp_path / "summary.json"
    runner = CliRunner()
    assert runner.invoke(main, ["ingest", str(trace),
                                "--summary", str(summary)]).exit_code == 0
    plans_dir = tmp_path / "plans"
    plans_dir.mkdir(exist_ok=True)
    (plans_dir / "t1.json").write_text(PLAN_3T)
    proposal = tmp_path / "proposal.json"
    proposal.write_text(json.dumps({
        "kind": "create_mv", "name": "ab",
        "subtree": "join(scan(A, rows=1), scan(B, rows=1), rows=1, on='A.x=B.y')",
        "est_mv_rows": 1e6, "row_bytes": 8,
        "refresh_per_write_batch_node_s": refresh,
    }))
    pricebook = tmp_path / "pricebook.json"
    pricebook.write_text(json.dumps({
        "node_price_per_hour": 3.6, "storage_price_per_gb_hour": 0.001,
        "write_batches_per_hour": batches, "amortization_hours": 720.0,
    }))
    return str(proposal), str(summary), str(plans_dir), str(pricebook)


def test_advise_accept_records_state(runner, files, tmp_path):
    proposal, summary, plans_dir, pricebook = _advise_setup(tmp_path, files)
    result = runner.invoke(main, ["advise", proposal, "--summary", summary,
                                  "--plans", plans_dir, "--pricebook", pricebook,
                                  "--hw", files["hw.json"], "--approve",
                                  "--state", files["state"], "--out", files["out"]])
    assert result.exit_code == 0, result.output
    assert "ACCEPT" in result.output
    state = json.loads((tmp_path / "state.json").read_text())
    assert state["applied"][0]["kind"] == "create_mv"
    report = json.loads((tmp_path / "out" / "tuning_report.json").read_text())
    assert report["report"]["verdict"] == "accept"


def test_advise_reject_with_approve_exits_3(runner, files, tmp_path):
    proposal, summary, plans_dir, pricebook = _advise_setup(
        tmp_path, files, refresh=3600.0, batches=50.0)
    result = runner.invoke(main, ["advise", proposal, "--summary", summary,
                                  "--plans", plans_dir, "--pricebook", pricebook,
                                  "--hw", files["hw.json"], "--approve",
                                  "--state", files["state"], "--out", files["out"]])
    assert result.exit_code == 3
    assert not (tmp_path / "state.json").exists()


def test_approved_mv_lowers_run_cost(runner, files, tmp_path):
    plan = parse_plan(PLAN_3T)
    scenario = tmp_path / "scenario3t.json"
    scenario.write_text(json.dumps({
        "plan": PLAN_3T,
        "true_rows": {op: node.est_out_rows for op, node in plan.operators.items()},
        "seed": 0,
    }))
    loose = tmp_path / "loose.json"
    loose.write_text(json.dumps({"mode": "sla", "latency_s": 30.0}))

    before = runner.invoke(main, ["run", str(scenario), "--constraint", str(loose),
                                  "--hw", files["hw.json"], "--state", files["state"],
                                  "--out", str(tmp_path / "before")])
    assert before.exit_code == 0, before.output

    proposal, summary, plans_dir, pricebook = _advise_setup(tmp_path, files)
    assert runner.invoke(main, ["advise", proposal, "--summary", summary,
                                "--plans", plans_dir, "--pricebook", pricebook,
                                "--hw", files["hw.json"], "--approve",
                                "--state", files["state"],
                                "--out", files["out"]]).exit_code == 0

    after = runner.invoke(main, ["run", str(scenario), "--constraint", str(loose),
                                 "--hw", files["hw.json"], "--state", files["state"],
                                 "--out", str(tmp_path / "after")])
    assert after.exit_code == 0, after.output

    pre = json.loads((tmp_path / "before" / "run_report.json").read_text())
    post = json.loads((tmp_path / "after" / "run_report.json").read_text())
    assert post["report"]["actual_dollars"] < pre["report"]["actual_dollars"]
    pre_ops = len(parse_plan(pre["plan_text"]).operators)
    post_ops = len(parse_plan(post["plan_text"]).operators)
    assert post_ops < pre_ops  # MV substitution removed the joined fragment
