"""Batch command-line client for the planning service.

Every command builds the same request model the HTTP API accepts and
either invokes the handler in-process (default) or POSTs it to a running
service (``--server``).  Exit codes: 0 success, 1 input error,
2 constraint missed, 3 approval rejected.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

from .service import handlers, schemas

EXIT_CONSTRAINT_MISS = 2
EXIT_REJECTED_APPROVE = 3

DEFAULT_STATE_FILE = "dopplan-state.json"

_HANDLERS = {
    "/calibrate": handlers.handle_calibrate,
    "/plan": handlers.handle_plan,
    "/simulate": handlers.handle_simulate,
    "/frontier": handlers.handle_frontier,
    "/ingest": handlers.handle_ingest,
    "/advise": handlers.handle_advise,
}


class Client:
    def __init__(self, server: str | None):
        self.server = server.rstrip("/") if server else None

    def post(self, path: str, request) -> dict:
        if self.server is None:
            try:
                return _HANDLERS[path](request).model_dump(mode="json")
            except handlers.ServiceInputError as exc:
                raise click.ClickException(str(exc)) from exc
        response = httpx.post(self.server + path,
                              json=request.model_dump(mode="json"), timeout=600.0)
        if response.status_code == 400:
            raise click.ClickException(response.json().get("detail", "bad request"))
        response.raise_for_status()
        return response.json()


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise click.ClickException(f"cannot read {path}: {exc}") from exc


def _read_json(path: str) -> dict:
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise click.ClickException(
            f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def _plan_text_from_file(path: str) -> str:
    return _read_text(path)


def _hw_model(path: str) -> schemas.HardwareProfileModel:
    doc = _read_json(path)
    try:
        return schemas.HardwareProfileModel(**doc)
    except Exception as exc:
        raise click.ClickException(f"{path}: bad hardware profile: {exc}") from exc


def _constraint_model(path: str) -> schemas.ConstraintModel:
    doc = _read_json(path)
    try:
        return schemas.ConstraintModel(**doc)
    except Exception as exc:
        raise click.ClickException(f"{path}: bad constraint file: {exc}") from exc


def _load_state(path: str) -> list[dict]:
    state_path = Path(path)
    if not state_path.exists():
        return []
    doc = _read_json(path)
    return list(doc.get("applied", []))


def _write(out_dir: str, name: str, content: str) -> Path:
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / name
    target.write_text(content)
    return target


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="URL of a running dopplan service; default runs in-process.")
@click.pass_context
def main(ctx, server):
    """Cost-aware DOP planning, execution replay, and tuning advice."""
    ctx.obj = Client(server)


@main.command()
@click.argument("samples_file")
@click.option("--hw", "hw_file", default=None, help="Base profile to refit.")
@click.option("--node-price", default=3.6, show_default=True,
              help="Dollars per node-hour (ignored with --hw).")
@click.option("--resize-delay", default=5.0, show_default=True)
@click.option("--morsel-rows", default=100_000.0, show_default=True)
@click.option("--out", default=".", show_default=True)
@click.pass_obj
def calibrate(client, samples_file, hw_file, node_price, resize_delay,
              morsel_rows, out):
    """Fit scalability models from a calibration samples file."""
    samples_doc = _read_json(samples_file)
    if not isinstance(samples_doc, list):
        raise click.ClickException(f"{samples_file}: expected an array of samples")
    request = schemas.CalibrateRequest(
        samples=[schemas.CalibrationSampleIn(**s) for s in samples_doc],
        node_price_per_hour=node_price, resize_delay_s=resize_delay,
        morsel_rows=morsel_rows,
        base=_hw_model(hw_file) if hw_file else None)
    result = client.post("/calibrate", request)
    target = _write(out, "hw_profile.json", result["profile_text"])
    for kind, reason in sorted(result["skipped_kinds"].items()):
        click.echo(f"warning: {kind} kept prior model: {reason}", err=True)
    click.echo(f"fitted {len(result['fitted_kinds'])} operator kinds -> {target}")


@main.command("plan")
@click.argument("plan_file")
@click.option("--constraint", "constraint_file", required=True)
@click.option("--hw", "hw_file", required=True)
@click.option("--state", "state_file", default=DEFAULT_STATE_FILE, show_default=True,
              help="Approved-action state consulted for plan rewrites.")
@click.option("--out", default=".", show_default=True)
@click.pass_obj
def plan_cmd(client, plan_file, constraint_file, hw_file, state_file, out):
    """Pick a DOP assignment (and bushy variant) for a plan."""
    request = schemas.PlanRequest(
        plan_text=_plan_text_from_file(plan_file),
        hw=_hw_model(hw_file),
        constraint=_constraint_model(constraint_file),
        applied=_load_state(state_file))
    result = client.post("/plan", request)
    target = _write(out, "plan_result.json", _dump(result))
    assignment = result["assignment"]
    est = assignment["estimate"]
    click.echo(f"variant {result['variant_index']}, "
               f"{'feasible' if assignment['feasible'] else 'INFEASIBLE'}: "
               f"latency {est['latency_s']:.3f} s, ${est['dollars']:.4f} -> {target}")
    if not assignment["feasible"]:
        sys.exit(EXIT_CONSTRAINT_MISS)


@main.command("simulate")
@click.argument("scenario_file")
@click.option("--constraint", "constraint_file", required=True)
@click.option("--hw", "hw_file", required=True)
@click.option("--theta-local", default=1.25, show_default=True)
@click.option("--theta-replan", default=2.0, show_default=True)
@click.option("--check-every", default=4, show_default=True)
@click.option("--seed", default=None, type=int,
              help="Override the scenario's morsel-jitter seed.")
@click.option("--state", "state_file", default=DEFAULT_STATE_FILE, show_default=True)
@click.option("--out", default=".", show_default=True)
@click.pass_obj
def simulate_cmd(client, scenario_file, constraint_file, hw_file, theta_local,
                 theta_replan, check_every, seed, state_file, out):
    """Plan a scenario's query, then replay it against scenario truth."""
    doc = _read_json(scenario_file)
    try:
        plan_raw = doc["plan"]
        scenario = schemas.ScenarioModel(
            plan_text=plan_raw if isinstance(plan_raw, str) else json.dumps(plan_raw),
            true_rows={str(k): float(v) for k, v in doc["true_rows"].items()},
            seed=int(doc.get("seed", 0)) if seed is None else seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise click.ClickException(f"{scenario_file}: bad scenario: {exc}") from exc
    request = schemas.SimulateRequest(
        scenario=scenario,
        hw=_hw_model(hw_file),
        constraint=_constraint_model(constraint_file),
        policy=schemas.PolicyModel(theta_local=theta_local,
                                   theta_replan=theta_replan,
                                   check_every_morsels=check_every),
        applied=_load_state(state_file))
    result = client.post("/simulate", request)
    timeline = result.pop("timeline_csv")
    report_path = _write(out, "run_report.json", _dump(result))
    _write(out, "run_timeline.csv", timeline)
    report = result["report"]
    click.echo(f"latency {report['actual_latency_s']:.3f} s, "
               f"${report['actual_dollars']:.4f}, "
               f"resizes {len(report['resize_events'])}, "
               f"replans {report['replans']}, "
               f"{'constraint met' if report['sla_met'] else 'CONSTRAINT MISSED'}"
               f" -> {report_path}")
    if not report["sla_met"]:
        sys.exit(EXIT_CONSTRAINT_MISS)


main.add_command(simulate_cmd, name="run")


@main.command()
@click.argument("plan_file")
@click.option("--hw", "hw_file", required=True)
@click.option("--sla", "slas", multiple=True, type=float, required=True,
              help="Latency bound in seconds; repeat for a sweep.")
@click.option("--k-max", default=0, show_default=True)
@click.option("--dop-max", default=256, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
              default="csv", show_default=True)
@click.option("--state", "state_file", default=DEFAULT_STATE_FILE, show_default=True)
@click.option("--out", default=".", show_default=True)
@click.pass_obj
def frontier(client, plan_file, hw_file, slas, k_max, dop_max, fmt,
             state_file, out):
    """Emit the non-dominated latency/dollar points over an SLA sweep."""
    request = schemas.FrontierRequest(
        plan_text=_plan_text_from_file(plan_file),
        hw=_hw_model(hw_file), sweep=list(slas), k_max=k_max, dop_max=dop_max,
        applied=_load_state(state_file))
    result = client.post("/frontier", request)
    for warning in result["warnings"]:
        click.echo(f"warning: {warning}", err=True)
    if fmt == "csv":
        target = _write(out, "frontier.csv", result["csv"])
    else:
        target = _write(out, "frontier.json", _dump(
            {"schema_version": result["schema_version"], "points": result["points"]}))
    click.echo(f"{len(result['points'])} frontier points -> {target}")


@main.command()
@click.argument("trace_file")
@click.option("--summary", "summary_file", required=True,
              help="Summary file to update (created if absent).")
@click.pass_obj
def ingest(client, trace_file, summary_file):
    """Fold a newline-delimited trace log into a workload summary."""
    summary_doc = None
    if Path(summary_file).exists():
        summary_doc = _read_json(summary_file)
    request = schemas.IngestRequest(trace_text=_read_text(trace_file),
                                    summary_doc=summary_doc)
    result = client.post("/ingest", request)
    Path(summary_file).write_text(result["summary_text"])
    click.echo(f"ingested {result['ingested']} records "
               f"(duplicates {result['duplicates']}, late {result['rejected_late']}, "
               f"malformed {result['malformed']}) -> {summary_file}")


@main.command()
@click.argument("proposal_file")
@click.option("--summary", "summary_file", required=True)
@click.option("--plans", "plans_dir", required=True,
              help="Directory of <template_id>.json plan documents.")
@click.option("--pricebook", "pricebook_file", required=True)
@click.option("--hw", "hw_file", required=True)
@click.option("--horizon", default=None, type=float,
              help="Prediction horizon in hours (default: amortization horizon).")
@click.option("--approve", is_flag=True,
              help="Record the action into the state file when accepted.")
@click.option("--state", "state_file", default=DEFAULT_STATE_FILE, show_default=True)
@click.option("--out", default=".", show_default=True)
@click.pass_obj
def advise(client, proposal_file, summary_file, plans_dir, pricebook_file,
           hw_file, horizon, approve, state_file, out):
    """Evaluate a tuning proposal's dollar benefit against predicted load."""
    plans = {}
    plans_path = Path(plans_dir)
    if not plans_path.is_dir():
        raise click.ClickException(f"{plans_dir} is not a directory")
    for entry in sorted(plans_path.glob("*.json")):
        plans[entry.stem] = entry.read_text()
    pricebook_doc = _read_json(pricebook_file)
    try:
        pricebook = schemas.PriceBookModel(**pricebook_doc)
    except Exception as exc:
        raise click.ClickException(f"{pricebook_file}: bad pricebook: {exc}") from exc
    request = schemas.AdviseRequest(
        proposal=_read_json(proposal_file),
        summary_doc=_read_json(summary_file),
        plans=plans,
        hw=_hw_model(hw_file),
        pricebook=pricebook,
        horizon_hours=horizon,
        approve=approve)
    result = client.post("/advise", request)
    report_text = result.pop("report_text")
    target = _write(out, "tuning_report.json", _dump(result))
    click.echo(report_text, nl=False)
    click.echo(f"report -> {target}")
    if approve and not result["accepted"]:
        click.echo("proposal rejected; state unchanged", err=True)
        sys.exit(EXIT_REJECTED_APPROVE)
    if approve and result["applied_entry"] is not None:
        state_path = Path(state_file)
        state = {"version": 1, "applied": _load_state(state_file)}
        state["applied"].append(result["applied_entry"])
        state_path.write_text(_dump(state))
        click.echo(f"approved action recorded in {state_path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the planning service over HTTP."""
    import uvicorn

    from .service.app import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
