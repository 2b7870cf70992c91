"""Background workload statistics: trace ingestion into queryable
summaries (attribute access counts, a weighted join graph, throughput
samples, template arrival rates) plus rate extrapolation and model refits.

All weighted counts decay exponentially with a configurable half-life.
Each counter stores its value at the moment it was last touched, so
ingestion is a pure left-fold over the record stream: the same records in
the same order produce a byte-identical summary regardless of batching.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

from .estimator import HardwareProfile
from .scaling import CalibrationError, CalibrationSample, fit_model

log = logging.getLogger(__name__)

SUMMARY_FORMAT_VERSION = 1

DEFAULT_HALF_LIFE_HOURS = 24.0
REORDER_TOLERANCE_S = 60.0


class SummaryFormatError(ValueError):
    pass


@dataclass(frozen=True)
class OpTrace:
    op_kind: str
    attribute_refs: tuple[str, ...]
    est_rows: float
    actual_rows: float
    dop: int
    duration_s: float
    node_seconds: float


@dataclass(frozen=True)
class TraceRecord:
    query_id: str
    template_id: str
    timestamp_s: float
    operators: tuple[OpTrace, ...]


def trace_record_from_dict(doc: dict) -> TraceRecord:
    ops = []
    for raw in doc["operators"]:
        op = OpTrace(
            op_kind=str(raw["op_kind"]),
            attribute_refs=tuple(str(a) for a in raw.get("attribute_refs", ())),
            est_rows=float(raw.get("est_rows", 0.0)),
            actual_rows=float(raw["actual_rows"]),
            dop=int(raw.get("dop", 1)),
            duration_s=float(raw["duration_s"]),
            node_seconds=float(raw.get("node_seconds", 0.0)),
        )
        if op.duration_s < 0 or op.node_seconds < 0 or op.actual_rows < 0:
            raise ValueError(f"negative measurement in operator entry {raw}")
        ops.append(op)
    return TraceRecord(
        query_id=str(doc["query_id"]),
        template_id=str(doc["template_id"]),
        timestamp_s=float(doc["timestamp_s"]),
        operators=tuple(ops),
    )


@dataclass
class DecayedCounter:
    """Exponentially decayed count, stored as (value at last touch)."""
    value: float
    ts: float

    def bump(self, t: float, half_life_s: float, amount: float = 1.0) -> None:
        if t >= self.ts:
            self.value = self.value * 2.0 ** (-(t - self.ts) / half_life_s) + amount
            self.ts = t
        else:
            # Late arrival: fold its (already decayed) contribution in.
            self.value += amount * 2.0 ** (-(self.ts - t) / half_life_s)

    def value_at(self, t: float, half_life_s: float) -> float:
        return self.value * 2.0 ** (-(t - self.ts) / half_life_s)


@dataclass
class WorkloadSummary:
    half_life_hours: float = DEFAULT_HALF_LIFE_HOURS
    last_ts: float | None = None
    attr_access: dict[str, DecayedCounter] = field(default_factory=dict)
    join_graph: dict[tuple[str, str], DecayedCounter] = field(default_factory=dict)
    throughput_samples: dict[str, list[CalibrationSample]] = field(default_factory=dict)
    templates: dict[str, DecayedCounter] = field(default_factory=dict)
    seen_query_ids: set[str] = field(default_factory=set)
    ingested: int = 0
    duplicates: int = 0
    rejected_late: int = 0
    malformed: int = 0

    @property
    def half_life_s(self) -> float:
        return self.half_life_hours * 3600.0

    def template_rate_per_hour(self, template_id: str) -> float:
        """Arrival-rate estimate: a steady rate lam leaves a decayed count of
        lam * half_life / ln 2, so invert that."""
        counter = self.templates.get(template_id)
        if counter is None or self.last_ts is None:
            return 0.0
        count = counter.value_at(self.last_ts, self.half_life_s)
        return count * math.log(2.0) / self.half_life_hours

    def join_weight(self, attr_a: str, attr_b: str) -> float:
        counter = self.join_graph.get(_edge_key(attr_a, attr_b))
        if counter is None or self.last_ts is None:
            return 0.0
        return counter.value_at(self.last_ts, self.half_life_s)


def _edge_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def ingest(records, summary: WorkloadSummary) -> WorkloadSummary:
    """Fold trace records into the summary.  Records must be roughly
    timestamp-ordered: anything more than 60 s older than the newest seen
    record is rejected (counted); duplicates by query_id are ignored."""
    hl = summary.half_life_s
    for rec in records:
        if rec.query_id in summary.seen_query_ids:
            summary.duplicates += 1
            continue
        if summary.last_ts is not None and rec.timestamp_s < summary.last_ts - REORDER_TOLERANCE_S:
            summary.rejected_late += 1
            continue
        summary.seen_query_ids.add(rec.query_id)
        summary.ingested += 1
        t = rec.timestamp_s
        if summary.last_ts is None or t > summary.last_ts:
            summary.last_ts = t

        counter = summary.templates.setdefault(rec.template_id, DecayedCounter(0.0, t))
        counter.bump(t, hl)

        for op in rec.operators:
            for attr in op.attribute_refs:
                summary.attr_access.setdefault(attr, DecayedCounter(0.0, t)).bump(t, hl)
            if op.op_kind == "HashProbe" and len(op.attribute_refs) >= 2:
                refs = op.attribute_refs
                for i in range(len(refs)):
                    for j in range(i + 1, len(refs)):
                        key = _edge_key(refs[i], refs[j])
                        summary.join_graph.setdefault(key, DecayedCounter(0.0, t)).bump(t, hl)
            if op.actual_rows > 0 and op.duration_s > 0:
                summary.throughput_samples.setdefault(op.op_kind, []).append(
                    CalibrationSample(op_kind=op.op_kind, dop=op.dop,
                                      rows=op.actual_rows,
                                      measured_seconds=op.duration_s))
    return summary


def ingest_lines(text: str, summary: WorkloadSummary) -> WorkloadSummary:
    """Ingest a newline-delimited trace log; malformed lines are reported,
    skipped, and counted."""
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(trace_record_from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            summary.malformed += 1
            log.warning("skipping malformed trace line %d: %s", lineno, exc)
    return ingest(records, summary)


@dataclass(frozen=True)
class PredictedWorkload:
    horizon_hours: float
    expected: dict[str, float]   # template_id -> expected executions

    def rate_per_hour(self, template_id: str) -> float:
        return self.expected.get(template_id, 0.0) / self.horizon_hours


def predict(summary: WorkloadSummary, horizon_hours: float) -> PredictedWorkload:
    """Expected executions per template over the horizon, extrapolating the
    decayed arrival rates."""
    if horizon_hours <= 0:
        raise ValueError("horizon_hours must be positive")
    expected = {}
    for template_id in sorted(summary.templates):
        rate = summary.template_rate_per_hour(template_id)
        if rate > 0:
            expected[template_id] = rate * horizon_hours
    return PredictedWorkload(horizon_hours=horizon_hours, expected=expected)


def refit_models(summary: WorkloadSummary, hw: HardwareProfile) -> HardwareProfile:
    """Refit scalability models per operator kind from observed throughput
    samples; kinds without enough evidence keep their prior model."""
    models = dict(hw.models)
    for kind in sorted(summary.throughput_samples):
        samples = summary.throughput_samples[kind]
        if len(samples) < 3 or len({s.dop for s in samples}) < 2:
            continue
        try:
            models[kind] = fit_model(samples)
        except CalibrationError as exc:
            log.warning("keeping prior model for %s: %s", kind, exc)
    return replace(hw, models=models)


# --- persistence ------------------------------------------------------------

def summary_to_doc(summary: WorkloadSummary) -> dict:
    # Bookkeeping counters (ingested/duplicates/...) are deliberately not
    # persisted: the document is a pure function of the accepted records, so
    # re-ingesting duplicates or re-batching a log cannot change it.
    return {
        "format_version": SUMMARY_FORMAT_VERSION,
        "half_life_hours": summary.half_life_hours,
        "last_ts": summary.last_ts,
        "attr_access": {
            attr: {"value": c.value, "ts": c.ts}
            for attr, c in sorted(summary.attr_access.items())
        },
        "join_graph": [
            {"a": a, "b": b, "value": c.value, "ts": c.ts}
            for (a, b), c in sorted(summary.join_graph.items())
        ],
        "templates": {
            tid: {"value": c.value, "ts": c.ts}
            for tid, c in sorted(summary.templates.items())
        },
        "throughput_samples": {
            kind: [
                {"dop": s.dop, "rows": s.rows, "measured_seconds": s.measured_seconds}
                for s in samples
            ]
            for kind, samples in sorted(summary.throughput_samples.items())
        },
        "seen_query_ids": sorted(summary.seen_query_ids),
    }


def summary_from_doc(doc: dict) -> WorkloadSummary:
    version = doc.get("format_version")
    if version is None or version > SUMMARY_FORMAT_VERSION:
        raise SummaryFormatError(
            f"summary format version {version} is newer than supported "
            f"({SUMMARY_FORMAT_VERSION})")
    return WorkloadSummary(
        half_life_hours=float(doc.get("half_life_hours", DEFAULT_HALF_LIFE_HOURS)),
        last_ts=doc.get("last_ts"),
        attr_access={attr: DecayedCounter(v["value"], v["ts"])
                     for attr, v in doc.get("attr_access", {}).items()},
        join_graph={_edge_key(e["a"], e["b"]): DecayedCounter(e["value"], e["ts"])
                    for e in doc.get("join_graph", ())},
        templates={tid: DecayedCounter(v["value"], v["ts"])
                   for tid, v in doc.get("templates", {}).items()},
        throughput_samples={
            kind: [CalibrationSample(op_kind=kind, dop=int(s["dop"]),
                                     rows=float(s["rows"]),
                                     measured_seconds=float(s["measured_seconds"]))
                   for s in samples]
            for kind, samples in doc.get("throughput_samples", {}).items()},
        seen_query_ids=set(doc.get("seen_query_ids", ())),
    )


def dump_summary(summary: WorkloadSummary) -> str:
    return json.dumps(summary_to_doc(summary), indent=2, sort_keys=True) + "\n"


def load_summary(text: str) -> WorkloadSummary:
    return summary_from_doc(json.loads(text))
