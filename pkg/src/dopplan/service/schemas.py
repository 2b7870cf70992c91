"""Request/response models for the planning service API."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

from .. import SCHEMA_VERSION


class ScalabilityModelIn(BaseModel):
    op_kind: str
    r: float
    sigma: float = 0.0
    kappa: float = 0.0


class HardwareProfileModel(BaseModel):
    node_price_per_hour: float
    resize_delay_s: float = 0.0
    morsel_rows: float = 100_000.0
    models: list[ScalabilityModelIn]


class CalibrationSampleIn(BaseModel):
    op_kind: str
    dop: int
    rows: float
    measured_seconds: float


class CalibrateRequest(BaseModel):
    samples: list[CalibrationSampleIn]
    node_price_per_hour: float = 3.6
    resize_delay_s: float = 5.0
    morsel_rows: float = 100_000.0
    base: HardwareProfileModel | None = None


class CalibrateResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    profile: HardwareProfileModel
    profile_text: str
    fitted_kinds: list[str]
    skipped_kinds: dict[str, str] = Field(default_factory=dict)


class ConstraintModel(BaseModel):
    mode: Literal["sla", "budget"] = "sla"
    latency_s: float | None = None
    budget_dollars: float | None = None
    dop_max: int = 256
    k_max: int = 0


class PipelineEstimateModel(BaseModel):
    start_s: float
    finish_s: float
    alloc_s: float
    dop: int
    node_seconds: float


class SimEstimateModel(BaseModel):
    latency_s: float
    machine_time_s: float
    blocked_s: float
    dollars: float
    per_pipeline: dict[int, PipelineEstimateModel]


class AssignmentModel(BaseModel):
    dops: dict[int, int]
    feasible: bool
    estimate: SimEstimateModel


class PlanRequest(BaseModel):
    plan_text: str
    hw: HardwareProfileModel
    constraint: ConstraintModel
    applied: list[dict] = Field(default_factory=list)


class PlanResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    variant_index: int
    plan_text: str
    assignment: AssignmentModel


class PolicyModel(BaseModel):
    theta_local: float = 1.25
    theta_replan: float = 2.0
    check_every_morsels: int = 4


class ScenarioModel(BaseModel):
    plan_text: str
    true_rows: dict[str, float]
    seed: int = 0


class ResizeEventModel(BaseModel):
    time_s: float
    pipeline: int
    old_dop: int
    new_dop: int
    reason: str


class TraceEventModel(BaseModel):
    time_s: float
    pipeline: int
    event: str
    dop: int
    rows: float


class PipelineActualModel(BaseModel):
    alloc_s: float
    start_s: float
    finish_s: float
    final_dop: int
    node_seconds: float


class ExecReportModel(BaseModel):
    actual_latency_s: float
    actual_dollars: float
    machine_time_s: float
    blocked_s: float
    resize_events: list[ResizeEventModel]
    replans: int
    sla_met: bool
    per_pipeline: dict[int, PipelineActualModel]


class SimulateRequest(BaseModel):
    scenario: ScenarioModel
    hw: HardwareProfileModel
    constraint: ConstraintModel
    policy: PolicyModel = Field(default_factory=PolicyModel)
    applied: list[dict] = Field(default_factory=list)


class SimulateResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    plan_text: str
    planned: AssignmentModel
    report: ExecReportModel
    timeline_csv: str


class FrontierRequest(BaseModel):
    plan_text: str
    hw: HardwareProfileModel
    sweep: list[float]
    k_max: int = 0
    dop_max: int = 256
    applied: list[dict] = Field(default_factory=list)


class FrontierPointModel(BaseModel):
    latency_s: float
    dollars: float
    variant_index: int
    dops: dict[int, int]


class FrontierResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    points: list[FrontierPointModel]
    csv: str
    warnings: list[str]


class IngestRequest(BaseModel):
    trace_text: str
    summary_doc: dict | None = None


class IngestResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    summary_text: str
    ingested: int
    duplicates: int
    rejected_late: int
    malformed: int


class PriceBookModel(BaseModel):
    node_price_per_hour: float
    storage_price_per_gb_hour: float
    write_batches_per_hour: float = 0.0
    amortization_hours: float = 720.0


class AdviseRequest(BaseModel):
    proposal: dict
    summary_doc: dict
    plans: dict[str, str]   # template_id -> plan document text
    hw: HardwareProfileModel
    pricebook: PriceBookModel
    horizon_hours: float | None = None
    approve: bool = False


class AdviseResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    report: dict
    report_text: str
    accepted: bool
    applied_entry: dict | None = None


class HealthResponse(BaseModel):
    schema_version: int = SCHEMA_VERSION
    status: str
    version: str
