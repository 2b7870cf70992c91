"""Constrained single-objective DOP assignment: minimize dollars under a
latency SLA, or minimize latency under a dollar budget.

The search is a greedy ascent over single-pipeline increments restricted to
the critical path (picking the best latency-reduction per added dollar),
followed by a cost-reclaiming descent and a sibling-balancing pass.  A
brute-force grid oracle quantifies the greedy gap on small instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

from .estimator import (HardwareProfile, QueryWork, SimEstimate,
                        evaluate_work, simulate_query)
from .plans import OperatorNode, PlanDAG, extract_pipelines

MODE_SLA = "sla"
MODE_BUDGET = "budget"

DEFAULT_DOP_MAX = 256

_SINK_CHAIN_KINDS = frozenset({"Filter", "Project", "Aggregate", "Sort", "Exchange"})


class PlannerError(ValueError):
    pass


@dataclass(frozen=True)
class UserConstraint:
    mode: str
    latency_sla_s: float | None = None
    budget_dollars: float | None = None
    dop_max: int = DEFAULT_DOP_MAX

    def __post_init__(self):
        if self.mode not in (MODE_SLA, MODE_BUDGET):
            raise ValueError(f"mode must be '{MODE_SLA}' or '{MODE_BUDGET}'")
        if self.mode == MODE_SLA:
            if self.latency_sla_s is None or self.latency_sla_s <= 0:
                raise ValueError("sla mode requires latency_sla_s > 0")
        else:
            if self.budget_dollars is None or self.budget_dollars <= 0:
                raise ValueError("budget mode requires budget_dollars > 0")
        if self.dop_max < 1:
            raise ValueError("dop_max must be >= 1")


def constraint_from_doc(doc: dict) -> tuple[UserConstraint, int]:
    """Parse a constraint file; returns the constraint plus k_max for
    bushy-variant exploration (0 when absent)."""
    mode = doc.get("mode", MODE_SLA)
    constraint = UserConstraint(
        mode=mode,
        latency_sla_s=float(doc["latency_s"]) if "latency_s" in doc else None,
        budget_dollars=float(doc["budget_dollars"]) if "budget_dollars" in doc else None,
        dop_max=int(doc.get("dop_max", DEFAULT_DOP_MAX)),
    )
    return constraint, int(doc.get("k_max", 0))


@dataclass(frozen=True)
class DOPAssignment:
    dops: dict[int, int]
    estimate: SimEstimate
    feasible: bool


def _critical_set(deps: dict[int, frozenset[int]],
                  sched: dict[int, tuple[float, float]], latency: float) -> set[int]:
    """Pipelines lying on some start-to-latency binding chain."""
    tol = 1e-9 * max(latency, 1.0)
    crit = {p for p, (_, fin) in sched.items() if fin >= latency - tol}
    stack = list(crit)
    while stack:
        p = stack.pop()
        start = sched[p][0]
        for d in deps[p]:
            if d not in crit and sched[d][1] >= start - tol:
                crit.add(d)
                stack.append(d)
    return crit


def _ascend(work, dops: dict[int, int], constraint: UserConstraint) -> None:
    """Greedy increments along the critical path.  Zero-latency-gain steps
    are accepted (a parallel equal-length chain can mask per-pipeline
    progress); increments that do not speed up their own pipeline are not."""
    sla = constraint.latency_sla_s
    budget = constraint.budget_dollars
    lat, dol, sched = evaluate_work(work, dops)
    while True:
        if constraint.mode == MODE_SLA and lat <= sla:
            return
        crit = _critical_set(work.deps, sched, lat)
        best = None  # (rate, pid, trial_eval)
        for pid in sorted(crit):
            d = dops[pid]
            if d >= constraint.dop_max:
                continue
            if work.duration(pid, d + 1) >= work.duration(pid, d):
                continue
            trial = dict(dops)
            trial[pid] = d + 1
            t_lat, t_dol, t_sched = evaluate_work(work, trial)
            if constraint.mode == MODE_BUDGET and t_dol > budget:
                continue
            dlat = lat - t_lat
            if dlat < 0 and dlat >= -1e-12 * max(lat, 1.0):
                dlat = 0.0
            if dlat < 0:
                continue
            dcost = t_dol - dol
            # Free increments (linear scaling) have infinite dollar rate;
            # among them the limit ordering is by latency reduction.
            if dcost <= 1e-15 * max(dol, 1.0):
                rate = (2.0, dlat)
            else:
                rate = (1.0, dlat / dcost)
            if best is None or rate > best[0]:
                best = (rate, pid, (t_lat, t_dol, t_sched))
        if best is None:
            return
        dops[best[1]] += 1
        lat, dol, sched = best[2]


def _descend(work, dops: dict[int, int], constraint: UserConstraint) -> None:
    """Reclaim dollars: decrement any DOP whose decrement keeps the result
    no worse (SLA still met / latency not increased)."""
    sla = constraint.latency_sla_s
    lat, dol, _ = evaluate_work(work, dops)
    changed = True
    while changed:
        changed = False
        for pid in sorted(dops):
            if dops[pid] <= 1:
                continue
            trial = dict(dops)
            trial[pid] -= 1
            t_lat, t_dol, _ = evaluate_work(work, trial)
            if constraint.mode == MODE_SLA:
                ok = t_lat <= sla if lat <= sla else t_lat <= lat
            else:
                ok = t_lat <= lat
            if ok and t_dol < dol:
                dops[pid] -= 1
                lat, dol = t_lat, t_dol
                changed = True


def _balance(work, dops: dict[int, int]) -> None:
    """For each group of concurrent sibling dependencies, lower every
    faster sibling to the smallest DOP that still finishes by the group
    maximum.  Never raises a DOP, never moves the group's max finish."""
    for q in sorted(work.deps):
        group = sorted(work.deps[q])
        if len(group) < 2:
            continue
        _, _, sched = evaluate_work(work, dops)
        slowest = max(group, key=lambda p: (sched[p][1], -p))
        t_max = sched[slowest][1]
        win = sched[slowest]
        for pid in group:
            if pid == slowest:
                continue
            start, finish = sched[pid]
            if not (start < win[1] and finish > win[0]):
                continue  # not concurrent with the slowest sibling
            allowed = t_max - start
            for d in range(1, dops[pid] + 1):
                if work.duration(pid, d) <= allowed * (1.0 + 1e-12):
                    if d < dops[pid]:
                        dops[pid] = d
                    break


def optimize_work(work, constraint: UserConstraint) -> tuple[dict[int, int], bool]:
    """Core search shared by static planning and runtime replanning."""
    dops = {pid: 1 for pid in work.pipeline_ids()}
    lat, dol, _ = evaluate_work(work, dops)
    if constraint.mode == MODE_BUDGET and dol > constraint.budget_dollars:
        return dops, False  # even the cheapest grid point blows the budget
    _ascend(work, dops, constraint)
    _descend(work, dops, constraint)
    _balance(work, dops)
    lat, dol, _ = evaluate_work(work, dops)
    if constraint.mode == MODE_SLA:
        feasible = lat <= constraint.latency_sla_s
    else:
        feasible = dol <= constraint.budget_dollars
    return dops, feasible


def plan_dop(plan: PlanDAG, constraint: UserConstraint,
             hw: HardwareProfile) -> DOPAssignment:
    """Assign a DOP to every pipeline under the user constraint.
    Infeasibility is a result state (best-effort assignment), not an error."""
    work = QueryWork(plan, hw)
    dops, feasible = optimize_work(work, constraint)
    return DOPAssignment(dops=dops, estimate=simulate_query(plan, dops, hw),
                         feasible=feasible)


def balance_siblings(plan: PlanDAG, dops: DOPAssignment,
                     hw: HardwareProfile) -> DOPAssignment:
    """Standalone sibling-balancing post-pass over an existing assignment."""
    work = QueryWork(plan, hw)
    assignment = dict(dops.dops)
    _balance(work, assignment)
    return DOPAssignment(dops=assignment,
                         estimate=simulate_query(plan, assignment, hw),
                         feasible=dops.feasible)


# --- bushy variants --------------------------------------------------------

@dataclass
class _Spine:
    sink_chain: list[str]   # unary operators above the top join, top-down
    joins: list[str]        # probe ids, bottom-up (joins[i] joins scans[i+1])
    builds: list[str]       # HashBuild ids, bottom-up, builds[i] under joins[i]
    scans: list[str]        # build-side scan ids, bottom-up
    base: str               # probe-side base scan


def _analyze_spine(plan: PlanDAG) -> _Spine:
    cur = plan.operators[plan.root]
    sink_chain: list[str] = []
    while cur.kind in _SINK_CHAIN_KINDS:
        sink_chain.append(cur.id)
        cur = plan.operators[cur.children[0]]
    if cur.kind != "HashProbe":
        raise PlannerError("plan is not a left-deep join chain")
    joins_td: list[str] = []
    builds_td: list[str] = []
    scans_td: list[str] = []
    base: str | None = None
    while True:
        build = plan.operators[cur.children[0]]
        if build.kind != "HashBuild" or len(build.children) != 1:
            raise PlannerError("plan is not a left-deep join chain")
        scan = plan.operators[build.children[0]]
        if scan.kind != "TableScan":
            raise PlannerError("plan is not a left-deep join chain")
        joins_td.append(cur.id)
        builds_td.append(build.id)
        scans_td.append(scan.id)
        inner = plan.operators[cur.children[1]]
        if inner.kind == "HashProbe":
            cur = inner
        elif inner.kind == "TableScan":
            base = inner.id
            break
        else:
            raise PlannerError("plan is not a left-deep join chain")
    return _Spine(sink_chain=sink_chain, joins=joins_td[::-1],
                  builds=builds_td[::-1], scans=scans_td[::-1], base=base)


def _detachable_pairs(plan: PlanDAG, spine: _Spine) -> list[int]:
    """Greedy bottom-up disjoint selection of non-expanding scan pairs.
    A value k means scans[k-1]/scans[k] (1-based spine position) detach."""
    n = len(spine.joins)
    est = lambda op_id: plan.operators[op_id].est_out_rows
    chain_out = [est(spine.base)] + [est(j) for j in spine.joins]

    def fanout(i: int) -> float:  # output multiplier of spine step i (1-based)
        return chain_out[i] / chain_out[i - 1] if chain_out[i - 1] > 0 else 0.0

    picked: list[int] = []
    k = 1
    while k <= n - 1:
        r_k = est(spine.scans[k - 1])
        r_k1 = est(spine.scans[k])
        if r_k * fanout(k + 1) <= max(r_k, r_k1):
            picked.append(k)
            k += 2
        else:
            k += 1
    return picked


def _build_variant(plan: PlanDAG, spine: _Spine, pairs: list[int]) -> PlanDAG:
    pair_set = set(pairs)
    est = lambda op_id: plan.operators[op_id].est_out_rows
    chain_out = [est(spine.base)] + [est(j) for j in spine.joins]
    ops: dict[str, OperatorNode] = {}

    def copy(op_id: str, **changes) -> str:
        ops[op_id] = replace(plan.operators[op_id], **changes)
        return op_id

    copy(spine.base)
    for op_id in spine.sink_chain:
        copy(op_id)

    n = len(spine.joins)
    inner = spine.base
    i = 1
    while i <= n:
        if i in pair_set:
            r_k, r_k1 = spine.scans[i - 1], spine.scans[i]
            copy(r_k)
            copy(r_k1)
            copy(spine.builds[i])  # original build over R_{k+1}, reused
            fan = chain_out[i + 1] / chain_out[i] if chain_out[i] > 0 else 0.0
            pair_est = est(r_k) * fan
            rb = plan.operators[r_k].row_bytes + plan.operators[r_k1].row_bytes
            probe_id = f"bushy_{r_k}_{r_k1}"
            build_id = f"bushyb_{r_k}_{r_k1}"
            ops[probe_id] = OperatorNode(
                probe_id, "HashProbe", pair_est, rb,
                (spine.builds[i], r_k),
                attrs=plan.operators[spine.joins[i]].attrs)
            ops[build_id] = OperatorNode(build_id, "HashBuild", pair_est, rb,
                                         (probe_id,))
            top = spine.joins[i]  # spine step that now consumes the pair
            copy(top, children=(build_id, inner),
                 attrs=plan.operators[spine.joins[i - 1]].attrs)
            inner = top
            i += 2
        else:
            copy(spine.scans[i - 1])
            copy(spine.builds[i - 1])
            j = spine.joins[i - 1]
            copy(j, children=(spine.builds[i - 1], inner))
            inner = j
            i += 1

    if spine.sink_chain:
        bottom = spine.sink_chain[-1]
        ops[bottom] = replace(ops[bottom], children=(inner,))
        root = spine.sink_chain[0]
    else:
        root = inner
    return extract_pipelines(PlanDAG(operators=ops, root=root))


def bushy_variants(plan: PlanDAG, k_max: int) -> list[PlanDAG]:
    """Increasingly bushier rewrites of a left-deep join chain: variant k
    detaches the first k admissible adjacent scan pairs into independent
    join subtrees.  Expanding detachments are skipped."""
    if k_max < 0:
        raise PlannerError("k_max must be >= 0")
    spine = _analyze_spine(plan)
    base = plan if plan.pipelines else extract_pipelines(plan)
    variants = [base]
    picked = _detachable_pairs(plan, spine)
    for j in range(1, min(k_max, len(picked)) + 1):
        variants.append(_build_variant(plan, spine, picked[:j]))
    return variants


def plan_with_variants(plan: PlanDAG, constraint: UserConstraint,
                       hw: HardwareProfile, k_max: int = 0
                       ) -> tuple[int, PlanDAG, DOPAssignment]:
    """Run plan_dop on every bushy variant and keep the best trade-off.
    Returns (variant_index, chosen_plan, assignment)."""
    base = plan if plan.pipelines else extract_pipelines(plan)
    if k_max <= 0:
        variants = [base]
    else:
        try:
            variants = bushy_variants(plan, k_max)
        except PlannerError:
            variants = [base]

    results = [(idx, v, plan_dop(v, constraint, hw))
               for idx, v in enumerate(variants)]
    feasible = [r for r in results if r[2].feasible]
    pool = feasible if feasible else results
    if constraint.mode == MODE_SLA:
        if feasible:
            key = lambda r: (r[2].estimate.dollars, r[2].estimate.blocked_s, r[0])
        else:
            key = lambda r: (r[2].estimate.latency_s, r[2].estimate.dollars, r[0])
    else:
        if feasible:
            key = lambda r: (r[2].estimate.latency_s, r[2].estimate.blocked_s, r[0])
        else:
            key = lambda r: (r[2].estimate.dollars, r[2].estimate.latency_s, r[0])
    return min(pool, key=key)


def brute_force_oracle(plan: PlanDAG, constraint: UserConstraint,
                       hw: HardwareProfile, dop_cap: int) -> DOPAssignment:
    """Exhaustive DOP-grid optimum under the same objective ordering.
    Test oracle only: refuses more than 5 pipelines or caps above 8."""
    if dop_cap > 8:
        raise PlannerError("oracle dop_cap must be <= 8")
    work = QueryWork(plan, hw)
    pids = work.pipeline_ids()
    if len(pids) > 5:
        raise PlannerError(f"oracle limited to 5 pipelines, got {len(pids)}")

    best_feasible = None   # (key, dops)
    best_any = None
    for combo in itertools.product(range(1, dop_cap + 1), repeat=len(pids)):
        dops = dict(zip(pids, combo))
        lat, dol, _ = evaluate_work(work, dops)
        if constraint.mode == MODE_SLA:
            ok = lat <= constraint.latency_sla_s
            f_key, a_key = (dol, combo), (lat, dol, combo)
        else:
            ok = dol <= constraint.budget_dollars
            f_key, a_key = (lat, combo), (dol, lat, combo)
        if ok and (best_feasible is None or f_key < best_feasible[0]):
            best_feasible = (f_key, dops)
        if best_feasible is None and (best_any is None or a_key < best_any[0]):
            best_any = (a_key, dops)

    if best_feasible is not None:
        dops, feasible = best_feasible[1], True
    else:
        dops, feasible = best_any[1], False
    return DOPAssignment(dops=dops, estimate=simulate_query(plan, dops, hw),
                         feasible=feasible)
