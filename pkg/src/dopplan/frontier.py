"""Latency/dollar trade-off sweep: plan one assignment per SLA value and
keep the mutually non-dominated points."""

from __future__ import annotations

from dataclasses import dataclass

from .estimator import HardwareProfile
from .planner import (DEFAULT_DOP_MAX, MODE_SLA, UserConstraint,
                      plan_with_variants)
from .plans import PlanDAG


@dataclass(frozen=True)
class FrontierPoint:
    latency_s: float
    dollars: float
    dops: dict[int, int]
    variant_index: int


def non_dominated(points: list[FrontierPoint]) -> list[FrontierPoint]:
    """Drop every point beaten (<= in both dimensions, < in one) by another;
    exact duplicates collapse to one."""
    unique: dict[tuple[float, float], FrontierPoint] = {}
    for p in points:
        unique.setdefault((p.latency_s, p.dollars), p)
    kept = []
    for key, p in unique.items():
        dominated = any(
            q.latency_s <= p.latency_s and q.dollars <= p.dollars
            and (q.latency_s < p.latency_s or q.dollars < p.dollars)
            for qkey, q in unique.items() if qkey != key)
        if not dominated:
            kept.append(p)
    return sorted(kept, key=lambda p: (p.latency_s, p.dollars))


def sweep_frontier(plan: PlanDAG, hw: HardwareProfile, slas: list[float],
                   k_max: int = 0, dop_max: int = DEFAULT_DOP_MAX
                   ) -> tuple[list[FrontierPoint], list[str]]:
    """Run the planner once per SLA value and filter to the frontier.
    Returns (points sorted by latency ascending, warnings)."""
    if not slas:
        raise ValueError("need at least one SLA value")
    warnings: list[str] = []
    raw: list[FrontierPoint] = []
    for sla in slas:
        constraint = UserConstraint(mode=MODE_SLA, latency_sla_s=float(sla),
                                    dop_max=dop_max)
        variant_idx, _, assignment = plan_with_variants(plan, constraint, hw, k_max)
        if not assignment.feasible:
            warnings.append(f"sla {sla}: infeasible at dop_max {dop_max}, skipped")
            continue
        raw.append(FrontierPoint(
            latency_s=assignment.estimate.latency_s,
            dollars=assignment.estimate.dollars,
            dops=dict(assignment.dops),
            variant_index=variant_idx))
    return non_dominated(raw), warnings


def frontier_csv(points: list[FrontierPoint]) -> str:
    lines = ["latency_s,dollars,variant_index,dops"]
    for p in points:
        dops = ";".join(f"{pid}:{d}" for pid, d in sorted(p.dops.items()))
        lines.append(f"{p.latency_s!r},{p.dollars!r},{p.variant_index},{dops}")
    return "\n".join(lines) + "\n"
