"""What-if evaluation of tuning proposals: convert the benefit of a
materialized view or a reclustering into a dollars-per-hour rate x, its
storage/maintenance/amortized one-time cost into a rate y, and accept
when x - y > 0.

Plan benefit is measured with every pipeline at DOP 1 (the cost-minimal
machine time); pure dollar deltas do not depend on the DOP for linear
operators and are cheapest there otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .estimator import HardwareProfile, SECONDS_PER_HOUR, simulate_query
from .plans import OperatorNode, PlanDAG, extract_pipelines, parse_plan, serialize_plan
from .stats import PredictedWorkload

KIND_CREATE_MV = "create_mv"
KIND_RECLUSTER = "recluster"

GIGABYTE = 1e9


class ProposalError(ValueError):
    pass


@dataclass(frozen=True)
class TuningProposal:
    kind: str
    name: str = "proposal"
    # create_mv
    subtree: PlanDAG | None = None
    est_mv_rows: float = 0.0
    row_bytes: float = 0.0
    refresh_per_write_batch_node_s: float = 0.0
    # recluster
    table: str = ""
    attribute: str = ""
    table_bytes: float = 0.0
    expected_scan_fraction: float = 1.0
    repopulation_node_s: float = 0.0

    def __post_init__(self):
        if self.kind == KIND_CREATE_MV:
            if self.subtree is None:
                raise ProposalError("create_mv proposal needs a subtree")
            if self.est_mv_rows <= 0 or self.row_bytes <= 0:
                raise ProposalError("create_mv sizes must be positive")
            if self.refresh_per_write_batch_node_s < 0:
                raise ProposalError("refresh cost must be >= 0")
        elif self.kind == KIND_RECLUSTER:
            if not self.table or not self.attribute:
                raise ProposalError("recluster proposal needs table and attribute")
            if not (0.0 < self.expected_scan_fraction <= 1.0):
                raise ProposalError("expected_scan_fraction must be in (0, 1]")
            if self.table_bytes <= 0 or self.repopulation_node_s < 0:
                raise ProposalError("recluster sizes must be positive")
        else:
            raise ProposalError(f"unknown proposal kind '{self.kind}'")


def proposal_from_doc(doc: dict) -> TuningProposal:
    kind = doc.get("kind")
    if kind == KIND_CREATE_MV:
        raw = doc["subtree"]
        subtree = parse_plan(raw if isinstance(raw, str) else json.dumps(raw))
        return TuningProposal(
            kind=kind, name=str(doc.get("name", "mv")),
            subtree=subtree,
            est_mv_rows=float(doc["est_mv_rows"]),
            row_bytes=float(doc["row_bytes"]),
            refresh_per_write_batch_node_s=float(
                doc.get("refresh_per_write_batch_node_s", 0.0)))
    if kind == KIND_RECLUSTER:
        return TuningProposal(
            kind=kind, name=str(doc.get("name", f"recluster_{doc.get('table', '')}")),
            table=str(doc["table"]), attribute=str(doc["attribute"]),
            table_bytes=float(doc["table_bytes"]),
            expected_scan_fraction=float(doc["expected_scan_fraction"]),
            repopulation_node_s=float(doc.get("repopulation_node_s", 0.0)))
    raise ProposalError(f"unknown proposal kind '{kind}'")


def proposal_to_doc(proposal: TuningProposal) -> dict:
    if proposal.kind == KIND_CREATE_MV:
        return {
            "kind": proposal.kind,
            "name": proposal.name,
            "subtree": json.loads(serialize_plan(proposal.subtree)),
            "est_mv_rows": proposal.est_mv_rows,
            "row_bytes": proposal.row_bytes,
            "refresh_per_write_batch_node_s": proposal.refresh_per_write_batch_node_s,
        }
    return {
        "kind": proposal.kind,
        "name": proposal.name,
        "table": proposal.table,
        "attribute": proposal.attribute,
        "table_bytes": proposal.table_bytes,
        "expected_scan_fraction": proposal.expected_scan_fraction,
        "repopulation_node_s": proposal.repopulation_node_s,
    }


@dataclass(frozen=True)
class PriceBook:
    node_price_per_hour: float
    storage_price_per_gb_hour: float
    write_batches_per_hour: float = 0.0
    amortization_hours: float = 720.0

    def __post_init__(self):
        if self.node_price_per_hour <= 0 or self.storage_price_per_gb_hour < 0:
            raise ValueError("prices must be positive")
        if self.write_batches_per_hour < 0 or self.amortization_hours <= 0:
            raise ValueError("rates must be non-negative, amortization positive")


def pricebook_from_doc(doc: dict) -> PriceBook:
    return PriceBook(
        node_price_per_hour=float(doc["node_price_per_hour"]),
        storage_price_per_gb_hour=float(doc["storage_price_per_gb_hour"]),
        write_batches_per_hour=float(doc.get("write_batches_per_hour", 0.0)),
        amortization_hours=float(doc.get("amortization_hours", 720.0)))


@dataclass(frozen=True)
class TemplateDelta:
    template_id: str
    rate_per_hour: float
    dollars_before: float
    dollars_after: float
    applied: bool

    @property
    def benefit_rate(self) -> float:
        return self.rate_per_hour * (self.dollars_before - self.dollars_after)


@dataclass(frozen=True)
class TuningReport:
    proposal_name: str
    proposal_kind: str
    x_dollars_per_hour: float
    y_dollars_per_hour: float
    storage_rate: float
    maintenance_rate: float
    one_time_rate: float
    one_time_dollars: float
    payback_hours: float | None
    verdict: bool
    per_template: tuple[TemplateDelta, ...]
    missing_templates: tuple[str, ...]

    @property
    def net_dollars_per_hour(self) -> float:
        return self.x_dollars_per_hour - self.y_dollars_per_hour


def _node_matches(plan: PlanDAG, op_id: str, sub: PlanDAG, sub_id: str) -> bool:
    a = plan.operators[op_id]
    b = sub.operators[sub_id]
    if a.kind != b.kind or a.table != b.table:
        return False
    if frozenset(a.attrs) != frozenset(b.attrs):
        return False
    if len(a.children) != len(b.children):
        return False
    return all(_node_matches(plan, ca, sub, cb)
               for ca, cb in zip(a.children, b.children))


def _subtree_ids(plan: PlanDAG, root: str) -> set[str]:
    out = {root}
    stack = [root]
    while stack:
        for child in plan.operators[stack.pop()].children:
            out.add(child)
            stack.append(child)
    return out


def _fresh_id(existing: set[str], base: str) -> str:
    if base not in existing:
        return base
    i = 1
    while f"{base}_{i}" in existing:
        i += 1
    return f"{base}_{i}"


def rewrite(plan: PlanDAG, proposal: TuningProposal) -> PlanDAG | None:
    """Apply the proposal to a plan: substitute matching join subtrees with
    an MVScan, or cut the physical read volume of reclustered scans.
    Returns None when nothing in the plan matches."""
    if proposal.kind == KIND_CREATE_MV:
        matches = [op_id for op_id in sorted(plan.operators)
                   if _node_matches(plan, op_id, proposal.subtree, proposal.subtree.root)]
        if not matches:
            return None
        # Matches of an identical shape cannot nest; drop any that overlap an
        # earlier match anyway, for safety.
        taken: set[str] = set()
        operators = dict(plan.operators)
        root = plan.root
        parents = plan.parent_map()
        for op_id in matches:
            ids = _subtree_ids(plan, op_id)
            if ids & taken:
                continue
            taken |= ids
            mv_id = _fresh_id(set(operators), f"mv_{proposal.name}")
            for dropped in ids:
                operators.pop(dropped, None)
            operators[mv_id] = OperatorNode(
                id=mv_id, kind="MVScan", est_out_rows=proposal.est_mv_rows,
                row_bytes=proposal.row_bytes, table=proposal.name)
            parent_id = parents.get(op_id)
            if parent_id is None:
                root = mv_id
            else:
                parent = operators[parent_id]
                operators[parent_id] = replace(parent, children=tuple(
                    mv_id if c == op_id else c for c in parent.children))
        return extract_pipelines(PlanDAG(operators=operators, root=root))

    # recluster: scans of the table (with the clustering attribute, when the
    # scan carries attribute metadata) read only the expected fraction.
    changed = {}
    for op_id in sorted(plan.operators):
        op = plan.operators[op_id]
        if op.kind != "TableScan" or op.table != proposal.table:
            continue
        if op.attrs and proposal.attribute not in op.attrs:
            continue
        base = op.read_rows if op.read_rows is not None else op.est_out_rows
        changed[op_id] = replace(op, read_rows=base * proposal.expected_scan_fraction)
    if not changed:
        return None
    operators = dict(plan.operators)
    operators.update(changed)
    return extract_pipelines(PlanDAG(operators=operators, root=plan.root))


def plan_cost_dollars(plan: PlanDAG, hw: HardwareProfile) -> float:
    """Dollar cost of one execution, all pipelines at DOP 1."""
    if not plan.pipelines:
        plan = extract_pipelines(plan)
    dops = {pid: 1 for pid in plan.pipelines}
    return simulate_query(plan, dops, hw).dollars


def _one_time_node_seconds(proposal: TuningProposal, hw: HardwareProfile) -> float:
    if proposal.kind == KIND_RECLUSTER:
        return proposal.repopulation_node_s
    subtree = extract_pipelines(proposal.subtree)
    dops = {pid: 1 for pid in subtree.pipelines}
    return simulate_query(subtree, dops, hw).machine_time_s


def evaluate(proposal: TuningProposal, predicted: PredictedWorkload,
             plans: dict[str, PlanDAG], hw: HardwareProfile,
             prices: PriceBook) -> TuningReport:
    """Dollar verdict for one proposal against the predicted workload.
    Benefit x sums per-template saving rates (negative deltas included);
    cost y = storage + maintenance + amortized one-time work."""
    deltas: list[TemplateDelta] = []
    missing: list[str] = []
    for template_id in sorted(predicted.expected):
        plan = plans.get(template_id)
        if plan is None:
            missing.append(template_id)
            continue
        rate = predicted.rate_per_hour(template_id)
        before = plan_cost_dollars(plan, hw)
        rewritten = rewrite(plan, proposal)
        after = before if rewritten is None else plan_cost_dollars(rewritten, hw)
        deltas.append(TemplateDelta(
            template_id=template_id, rate_per_hour=rate,
            dollars_before=before, dollars_after=after,
            applied=rewritten is not None))

    x = sum(d.benefit_rate for d in deltas)

    node_price_s = hw.node_price_per_hour / SECONDS_PER_HOUR
    if proposal.kind == KIND_CREATE_MV:
        storage_rate = (proposal.est_mv_rows * proposal.row_bytes / GIGABYTE
                        * prices.storage_price_per_gb_hour)
        maintenance_rate = (prices.write_batches_per_hour
                            * proposal.refresh_per_write_batch_node_s * node_price_s)
    else:
        storage_rate = 0.0  # reclustering replaces the layout in place
        maintenance_rate = 0.0
    one_time_dollars = _one_time_node_seconds(proposal, hw) * node_price_s
    one_time_rate = one_time_dollars / prices.amortization_hours
    y = storage_rate + maintenance_rate + one_time_rate

    net = x - y
    payback = one_time_dollars / net if (net > 0 and one_time_dollars > 0) else None
    return TuningReport(
        proposal_name=proposal.name, proposal_kind=proposal.kind,
        x_dollars_per_hour=x, y_dollars_per_hour=y,
        storage_rate=storage_rate, maintenance_rate=maintenance_rate,
        one_time_rate=one_time_rate, one_time_dollars=one_time_dollars,
        payback_hours=payback, verdict=net > 0,
        per_template=tuple(deltas), missing_templates=tuple(missing))


def report_to_doc(report: TuningReport) -> dict:
    return {
        "proposal": report.proposal_name,
        "kind": report.proposal_kind,
        "x_dollars_per_hour": report.x_dollars_per_hour,
        "y_dollars_per_hour": report.y_dollars_per_hour,
        "net_dollars_per_hour": report.net_dollars_per_hour,
        "y_breakdown": {
            "storage_rate": report.storage_rate,
            "maintenance_rate": report.maintenance_rate,
            "one_time_rate": report.one_time_rate,
            "one_time_dollars": report.one_time_dollars,
        },
        "payback_hours": report.payback_hours,
        "verdict": "accept" if report.verdict else "reject",
        "per_template": [
            {
                "template_id": d.template_id,
                "rate_per_hour": d.rate_per_hour,
                "dollars_before": d.dollars_before,
                "dollars_after": d.dollars_after,
                "applied": d.applied,
                "benefit_rate": d.benefit_rate,
            }
            for d in report.per_template
        ],
        "missing_templates": list(report.missing_templates),
    }


def render_report(report: TuningReport) -> str:
    """Human-readable table; money to 4 decimals."""
    lines = [
        f"proposal: {report.proposal_name} ({report.proposal_kind})",
        f"benefit x : {report.x_dollars_per_hour:12.4f} $/h",
        f"cost y    : {report.y_dollars_per_hour:12.4f} $/h  "
        f"(storage {report.storage_rate:.4f}, maintenance {report.maintenance_rate:.4f}, "
        f"one-time {report.one_time_rate:.4f})",
        f"net       : {report.net_dollars_per_hour:12.4f} $/h",
        f"verdict   : {'ACCEPT' if report.verdict else 'REJECT'}",
    ]
    if report.payback_hours is not None:
        lines.append(f"payback   : {report.payback_hours:12.1f} h")
    if report.per_template:
        lines.append("template                    rate/h     $before      $after    rate-gain")
        for d in report.per_template:
            lines.append(f"{d.template_id:<24} {d.rate_per_hour:9.3f} "
                         f"{d.dollars_before:11.4f} {d.dollars_after:11.4f} "
                         f"{d.benefit_rate:12.4f}")
    for t in report.missing_templates:
        lines.append(f"warning: no plan registered for predicted template '{t}'")
    return "\n".join(lines) + "\n"
