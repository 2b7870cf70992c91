"""Service handlers: pure functions from request models to response models.

The CLI invokes these in-process; the FastAPI app exposes the same
functions over HTTP.  Every handler is deterministic for a fixed request.
"""

from __future__ import annotations

import json

from .. import __version__
from ..estimator import HardwareProfile, SimEstimate
from ..execsim import MonitorPolicy, Scenario, run as replay
from ..frontier import frontier_csv, sweep_frontier
from ..planner import (DOPAssignment, MODE_BUDGET, MODE_SLA, UserConstraint,
                       plan_dop, plan_with_variants)
from ..plans import PlanDAG, PlanError, extract_pipelines, parse_plan, serialize_plan
from ..scaling import CalibrationError, CalibrationSample, ScalabilityModel, fit_model
from ..stats import (SummaryFormatError, WorkloadSummary, dump_summary,
                     ingest_lines, predict, summary_from_doc)
from ..whatif import (PriceBook, ProposalError, TuningProposal, evaluate,
                      proposal_from_doc, proposal_to_doc, render_report,
                      report_to_doc, rewrite)
from . import schemas


class ServiceInputError(ValueError):
    """Bad request content (maps to HTTP 400 / CLI exit 1)."""


def _hw_from_model(model: schemas.HardwareProfileModel) -> HardwareProfile:
    try:
        return HardwareProfile(
            node_price_per_hour=model.node_price_per_hour,
            resize_delay_s=model.resize_delay_s,
            morsel_rows=model.morsel_rows,
            models={m.op_kind: ScalabilityModel(m.op_kind, m.r, m.sigma, m.kappa)
                    for m in model.models})
    except ValueError as exc:
        raise ServiceInputError(str(exc)) from exc


def _hw_to_model(hw: HardwareProfile) -> schemas.HardwareProfileModel:
    return schemas.HardwareProfileModel(
        node_price_per_hour=hw.node_price_per_hour,
        resize_delay_s=hw.resize_delay_s,
        morsel_rows=hw.morsel_rows,
        models=[schemas.ScalabilityModelIn(op_kind=k, r=m.r, sigma=m.sigma,
                                           kappa=m.kappa)
                for k, m in sorted(hw.models.items())])


def _constraint(model: schemas.ConstraintModel) -> UserConstraint:
    try:
        return UserConstraint(
            mode=model.mode,
            latency_sla_s=model.latency_s,
            budget_dollars=model.budget_dollars,
            dop_max=model.dop_max)
    except ValueError as exc:
        raise ServiceInputError(str(exc)) from exc


def _parse(plan_text: str) -> PlanDAG:
    try:
        return extract_pipelines(parse_plan(plan_text))
    except PlanError as exc:
        raise ServiceInputError(f"plan error: {exc}") from exc


def _proposals(docs: list[dict]) -> list[TuningProposal]:
    try:
        return [proposal_from_doc(d) for d in docs]
    except (ProposalError, KeyError, ValueError) as exc:
        raise ServiceInputError(f"bad proposal: {exc}") from exc


def _apply_proposals(plan: PlanDAG, proposals: list[TuningProposal]) -> PlanDAG:
    for proposal in proposals:
        rewritten = rewrite(plan, proposal)
        if rewritten is not None:
            plan = rewritten
    return plan


def _estimate_model(est: SimEstimate) -> schemas.SimEstimateModel:
    return schemas.SimEstimateModel(
        latency_s=est.latency_s, machine_time_s=est.machine_time_s,
        blocked_s=est.blocked_s, dollars=est.dollars,
        per_pipeline={
            pid: schemas.PipelineEstimateModel(
                start_s=p.start_s, finish_s=p.finish_s, alloc_s=p.alloc_s,
                dop=p.dop, node_seconds=p.node_seconds)
            for pid, p in est.per_pipeline.items()})


def _assignment_model(assignment: DOPAssignment) -> schemas.AssignmentModel:
    return schemas.AssignmentModel(dops=dict(assignment.dops),
                                   feasible=assignment.feasible,
                                   estimate=_estimate_model(assignment.estimate))


def handle_calibrate(req: schemas.CalibrateRequest) -> schemas.CalibrateResponse:
    if req.base is not None:
        base = _hw_from_model(req.base)
        price, delay, morsel = (base.node_price_per_hour, base.resize_delay_s,
                                base.morsel_rows)
        models = dict(base.models)
    else:
        price, delay, morsel = (req.node_price_per_hour, req.resize_delay_s,
                                req.morsel_rows)
        models = {}

    by_kind: dict[str, list[CalibrationSample]] = {}
    for s in req.samples:
        try:
            sample = CalibrationSample(op_kind=s.op_kind, dop=s.dop, rows=s.rows,
                                       measured_seconds=s.measured_seconds)
        except ValueError as exc:
            raise ServiceInputError(f"bad sample: {exc}") from exc
        by_kind.setdefault(s.op_kind, []).append(sample)

    fitted, skipped = [], {}
    for kind in sorted(by_kind):
        try:
            models[kind] = fit_model(by_kind[kind])
            fitted.append(kind)
        except CalibrationError as exc:
            skipped[kind] = str(exc)
    if not models:
        raise ServiceInputError("no usable calibration samples")

    try:
        hw = HardwareProfile(node_price_per_hour=price, resize_delay_s=delay,
                             morsel_rows=morsel, models=models)
    except ValueError as exc:
        raise ServiceInputError(str(exc)) from exc
    from ..estimator import dump_profile
    return schemas.CalibrateResponse(profile=_hw_to_model(hw),
                                     profile_text=dump_profile(hw),
                                     fitted_kinds=fitted, skipped_kinds=skipped)


def handle_plan(req: schemas.PlanRequest) -> schemas.PlanResponse:
    hw = _hw_from_model(req.hw)
    constraint = _constraint(req.constraint)
    plan = _apply_proposals(_parse(req.plan_text), _proposals(req.applied))
    try:
        variant_idx, chosen, assignment = plan_with_variants(
            plan, constraint, hw, req.constraint.k_max)
    except (ValueError, KeyError) as exc:
        raise ServiceInputError(str(exc)) from exc
    return schemas.PlanResponse(variant_index=variant_idx,
                                plan_text=serialize_plan(chosen),
                                assignment=_assignment_model(assignment))


def _timeline_csv(report) -> str:
    lines = ["time_s,pipeline,event,dop,rows"]
    for t in report.trace:
        lines.append(f"{t.time_s!r},{t.pipeline},{t.event},{t.dop},{t.rows!r}")
    return "\n".join(lines) + "\n"


def handle_simulate(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
    hw = _hw_from_model(req.hw)
    constraint = _constraint(req.constraint)
    try:
        policy = MonitorPolicy(theta_local=req.policy.theta_local,
                               theta_replan=req.policy.theta_replan,
                               check_every_morsels=req.policy.check_every_morsels)
    except ValueError as exc:
        raise ServiceInputError(str(exc)) from exc

    plan = _parse(req.scenario.plan_text)
    true_rows = dict(req.scenario.true_rows)
    for proposal in _proposals(req.applied):
        rewritten = rewrite(plan, proposal)
        if rewritten is None:
            continue
        # substituted MV scans are assumed to match their declared size;
        # truth entries of replaced operators are dropped
        for op_id, op in rewritten.operators.items():
            if op_id not in plan.operators and op.kind == "MVScan":
                true_rows[op_id] = op.est_out_rows
        true_rows = {op_id: rows for op_id, rows in true_rows.items()
                     if op_id in rewritten.operators}
        plan = rewritten

    missing = [op_id for op_id in plan.operators if op_id not in true_rows]
    if missing:
        raise ServiceInputError(f"scenario true_rows missing operators {missing}")

    planned = plan_dop(plan, constraint, hw)
    scenario = Scenario(plan=plan, true_rows=true_rows, seed=req.scenario.seed)
    report = replay(scenario, planned, constraint, policy, hw)
    report_model = schemas.ExecReportModel(
        actual_latency_s=report.actual_latency_s,
        actual_dollars=report.actual_dollars,
        machine_time_s=report.machine_time_s,
        blocked_s=report.blocked_s,
        resize_events=[schemas.ResizeEventModel(
            time_s=e.time_s, pipeline=e.pipeline, old_dop=e.old_dop,
            new_dop=e.new_dop, reason=e.reason) for e in report.resize_events],
        replans=report.replans,
        sla_met=report.sla_met,
        per_pipeline={pid: schemas.PipelineActualModel(
            alloc_s=a.alloc_s, start_s=a.start_s, finish_s=a.finish_s,
            final_dop=a.final_dop, node_seconds=a.node_seconds)
            for pid, a in report.per_pipeline.items()})
    return schemas.SimulateResponse(plan_text=serialize_plan(plan),
                                    planned=_assignment_model(planned),
                                    report=report_model,
                                    timeline_csv=_timeline_csv(report))


def handle_frontier(req: schemas.FrontierRequest) -> schemas.FrontierResponse:
    if not req.sweep:
        raise ServiceInputError("sweep needs at least one SLA value")
    hw = _hw_from_model(req.hw)
    plan = _apply_proposals(_parse(req.plan_text), _proposals(req.applied))
    points, warnings = sweep_frontier(plan, hw, req.sweep, k_max=req.k_max,
                                      dop_max=req.dop_max)
    return schemas.FrontierResponse(
        points=[schemas.FrontierPointModel(
            latency_s=p.latency_s, dollars=p.dollars,
            variant_index=p.variant_index, dops=dict(p.dops))
            for p in points],
        csv=frontier_csv(points),
        warnings=warnings)


def handle_ingest(req: schemas.IngestRequest) -> schemas.IngestResponse:
    if req.summary_doc is not None:
        try:
            summary = summary_from_doc(req.summary_doc)
        except (SummaryFormatError, KeyError, ValueError) as exc:
            raise ServiceInputError(f"bad summary: {exc}") from exc
    else:
        summary = WorkloadSummary()
    ingest_lines(req.trace_text, summary)
    return schemas.IngestResponse(summary_text=dump_summary(summary),
                                  ingested=summary.ingested,
                                  duplicates=summary.duplicates,
                                  rejected_late=summary.rejected_late,
                                  malformed=summary.malformed)


def handle_advise(req: schemas.AdviseRequest) -> schemas.AdviseResponse:
    hw = _hw_from_model(req.hw)
    try:
        proposal = proposal_from_doc(req.proposal)
        prices = PriceBook(
            node_price_per_hour=req.pricebook.node_price_per_hour,
            storage_price_per_gb_hour=req.pricebook.storage_price_per_gb_hour,
            write_batches_per_hour=req.pricebook.write_batches_per_hour,
            amortization_hours=req.pricebook.amortization_hours)
        summary = summary_from_doc(req.summary_doc)
    except (ProposalError, SummaryFormatError, KeyError, ValueError) as exc:
        raise ServiceInputError(str(exc)) from exc
    plans = {tid: _parse(text) for tid, text in req.plans.items()}
    horizon = req.horizon_hours if req.horizon_hours else prices.amortization_hours
    predicted = predict(summary, horizon)
    report = evaluate(proposal, predicted, plans, hw, prices)
    accepted = report.verdict
    applied_entry = proposal_to_doc(proposal) if (req.approve and accepted) else None
    return schemas.AdviseResponse(report=report_to_doc(report),
                                  report_text=render_report(report),
                                  accepted=accepted,
                                  applied_entry=applied_entry)


def handle_health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)
