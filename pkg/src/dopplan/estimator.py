"""Query-level time/cost estimation: a hardware profile with per-kind
scalability models and a deterministic pipeline scheduler.

Money follows total machine time: every node is charged from its
allocation until its pipeline finishes, whether or not it is doing work.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .plans import Pipeline, PlanDAG, per_operator_rows
from .scaling import CalibrationSample, ScalabilityModel

SECONDS_PER_HOUR = 3600.0


class EstimationError(ValueError):
    """Raised when a plan cannot be costed with the given profile."""


@dataclass(frozen=True)
class HardwareProfile:
    node_price_per_hour: float
    resize_delay_s: float
    morsel_rows: float
    models: dict[str, ScalabilityModel]

    def __post_init__(self):
        if self.node_price_per_hour <= 0:
            raise ValueError("node_price_per_hour must be positive")
        if self.resize_delay_s < 0:
            raise ValueError("resize_delay_s must be >= 0")
        if self.morsel_rows <= 0:
            raise ValueError("morsel_rows must be positive")

    def model_for(self, op_kind: str) -> ScalabilityModel:
        try:
            return self.models[op_kind]
        except KeyError:
            raise EstimationError(f"no scalability model for operator kind '{op_kind}'") from None


def profile_to_doc(hw: HardwareProfile) -> dict:
    return {
        "node_price_per_hour": hw.node_price_per_hour,
        "resize_delay_s": hw.resize_delay_s,
        "morsel_rows": hw.morsel_rows,
        "models": [
            {"op_kind": kind, "r": m.r, "sigma": m.sigma, "kappa": m.kappa}
            for kind, m in sorted(hw.models.items())
        ],
    }


def profile_from_doc(doc: dict) -> HardwareProfile:
    models = {
        m["op_kind"]: ScalabilityModel(m["op_kind"], float(m["r"]),
                                       float(m.get("sigma", 0.0)),
                                       float(m.get("kappa", 0.0)))
        for m in doc["models"]
    }
    return HardwareProfile(
        node_price_per_hour=float(doc["node_price_per_hour"]),
        resize_delay_s=float(doc.get("resize_delay_s", 0.0)),
        morsel_rows=float(doc.get("morsel_rows", 100_000.0)),
        models=models,
    )


def dump_profile(hw: HardwareProfile) -> str:
    return json.dumps(profile_to_doc(hw), indent=2) + "\n"


def load_profile(text: str) -> HardwareProfile:
    return profile_from_doc(json.loads(text))


def samples_from_doc(doc: list) -> list[CalibrationSample]:
    return [
        CalibrationSample(op_kind=str(s["op_kind"]), dop=int(s["dop"]),
                          rows=float(s["rows"]),
                          measured_seconds=float(s["measured_seconds"]))
        for s in doc
    ]


@dataclass(frozen=True)
class PipelineEstimate:
    start_s: float
    finish_s: float
    alloc_s: float
    dop: int
    node_seconds: float


@dataclass(frozen=True)
class SimEstimate:
    latency_s: float
    machine_time_s: float
    blocked_s: float
    dollars: float
    per_pipeline: dict[int, PipelineEstimate]


def pipeline_time(plan: PlanDAG, pipeline: Pipeline, dop: int,
                  hw: HardwareProfile) -> float:
    """Bottleneck execution time: operators in a pipeline run concurrently,
    so the slowest operator paces the whole chain."""
    if dop < 1:
        raise EstimationError(f"dop must be >= 1, got {dop}")
    worst = 0.0
    for op_id, rows in per_operator_rows(plan, pipeline):
        if rows <= 0:
            continue
        rate = hw.model_for(plan.operators[op_id].kind).throughput(dop)
        worst = max(worst, rows / rate)
    return worst


class QueryWork:
    """Per-pipeline duration model for one (plan, hardware) pair, with
    memoized durations.  `cards` optionally overrides per-operator rows
    (used when replanning against corrected cardinalities)."""

    def __init__(self, plan: PlanDAG, hw: HardwareProfile,
                 cards: dict[str, float] | None = None):
        if not plan.pipelines:
            raise EstimationError("plan has no extracted pipelines")
        self.plan = plan
        self.hw = hw
        self.deps: dict[int, frozenset[int]] = {
            pid: pipe.deps for pid, pipe in plan.pipelines.items()}
        self._ops: dict[int, list[tuple[str, float]]] = {}
        for pid, pipe in plan.pipelines.items():
            rows = (_override_rows(plan, pipe, cards) if cards is not None
                    else per_operator_rows(plan, pipe))
            self._ops[pid] = [(plan.operators[op_id].kind, n) for op_id, n in rows]
        self._memo: dict[tuple[int, int], float] = {}

    def pipeline_ids(self) -> list[int]:
        return sorted(self.deps)

    def duration(self, pid: int, dop: int) -> float:
        key = (pid, dop)
        cached = self._memo.get(key)
        if cached is not None:
            return cached
        worst = 0.0
        for kind, rows in self._ops[pid]:
            if rows <= 0:
                continue
            rate = self.hw.model_for(kind).throughput(dop)
            worst = max(worst, rows / rate)
        self._memo[key] = worst
        return worst


def _override_rows(plan: PlanDAG, pipe: Pipeline,
                   cards: dict[str, float]) -> list[tuple[str, float]]:
    """per_operator_rows against an alternate cardinality assignment."""
    source = plan.operators[pipe.operators[0]]
    if source.kind in ("TableScan", "MVScan"):
        incoming = cards[source.id]
    elif source.kind == "Union":
        incoming = sum(cards[c] for c in source.children)
    elif source.kind == "HashProbe":
        incoming = cards[source.children[1]]
    else:
        incoming = cards[source.children[0]]
    out: list[tuple[str, float]] = []
    for op_id in pipe.operators:
        out.append((op_id, incoming))
        incoming = cards[op_id]
    return out


def schedule_pipelines(deps: dict[int, frozenset[int]],
                       durations: dict[int, float]) -> dict[int, tuple[float, float]]:
    """Static schedule: a pipeline starts when all dependencies finish.
    Returns pid -> (start, finish); iteration order is deterministic."""
    start_finish: dict[int, tuple[float, float]] = {}
    remaining = set(deps)
    while remaining:
        ready = sorted(p for p in remaining if deps[p] <= set(start_finish))
        if not ready:
            raise EstimationError("pipeline dependency graph has a cycle")
        for pid in ready:
            start = max((start_finish[d][1] for d in sorted(deps[pid])), default=0.0)
            start_finish[pid] = (start, start + durations[pid])
            remaining.discard(pid)
    return start_finish


def evaluate_work(work: QueryWork, dops: dict[int, int]) -> tuple[float, float, dict[int, tuple[float, float]]]:
    """(latency, dollars, schedule) for a DOP assignment, cheap form used in
    planner search loops.  Must stay numerically identical to simulate_query."""
    durations = {pid: work.duration(pid, dops[pid]) for pid in work.pipeline_ids()}
    sched = schedule_pipelines(work.deps, durations)
    latency = 0.0
    machine = 0.0
    for pid in work.pipeline_ids():
        start, finish = sched[pid]
        latency = max(latency, finish)
        machine += dops[pid] * (finish - start)
    dollars = machine * work.hw.node_price_per_hour / SECONDS_PER_HOUR
    return latency, dollars, sched


def simulate_query(plan: PlanDAG, dops, hw: HardwareProfile) -> SimEstimate:
    """Predict latency, machine time, blocked time, and dollars for a plan
    under a per-pipeline DOP assignment.

    Allocation policy: a pipeline's nodes are allocated at its statically
    predicted start, so in pure estimation blocked time is zero; replaying
    with estimation errors makes allocation and actual start diverge.
    """
    assignment = getattr(dops, "dops", dops)
    work = QueryWork(plan, hw)
    for pid in work.pipeline_ids():
        if pid not in assignment:
            raise EstimationError(f"pipeline {pid} has no DOP assigned")
        if assignment[pid] < 1:
            raise EstimationError(f"pipeline {pid} has dop < 1")
    latency, dollars, sched = evaluate_work(work, assignment)
    per_pipeline: dict[int, PipelineEstimate] = {}
    machine = 0.0
    blocked = 0.0
    for pid in work.pipeline_ids():
        start, finish = sched[pid]
        dop = assignment[pid]
        node_seconds = dop * (finish - start)
        machine += node_seconds
        per_pipeline[pid] = PipelineEstimate(
            start_s=start, finish_s=finish, alloc_s=start, dop=dop,
            node_seconds=node_seconds)
    return SimEstimate(latency_s=latency, machine_time_s=machine,
                       blocked_s=blocked, dollars=dollars,
                       per_pipeline=per_pipeline)
