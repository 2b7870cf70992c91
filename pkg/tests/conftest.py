import itertools
import random

import pytest

from dopplan.estimator import HardwareProfile
from dopplan.plans import OP_KINDS, OperatorNode, PlanDAG, load_plan, serialize_plan
from dopplan.scaling import ScalabilityModel


def make_hw(models: dict[str, tuple[float, float, float]] | None = None,
            price: float = 3.6, delay: float = 0.0,
            morsel: float = 100_000.0, default_r: float = 1e6) -> HardwareProfile:
    """Profile with linear models for every kind, plus overrides."""
    table = {kind: ScalabilityModel(kind, default_r) for kind in OP_KINDS}
    for kind, (r, sigma, kappa) in (models or {}).items():
        table[kind] = ScalabilityModel(kind, r, sigma, kappa)
    return HardwareProfile(node_price_per_hour=price, resize_delay_s=delay,
                           morsel_rows=morsel, models=table)


@pytest.fixture
def hw_linear():
    return make_hw()


def random_join_plan(rng: random.Random, max_tables: int = 4,
                     sink_ops: bool = True) -> PlanDAG:
    """Random join tree over 1..max_tables scans, optionally topped with a
    filter and/or aggregate.  Validated via serialize/parse round trip."""
    counter = itertools.count()
    ops: dict[str, OperatorNode] = {}

    def add(kind: str, rows: float, children=(), table=None) -> str:
        op_id = f"op{next(counter)}"
        ops[op_id] = OperatorNode(op_id, kind, rows, 8.0, tuple(children), table)
        return op_id

    n = rng.randint(1, max_tables)
    subtrees = [add("TableScan", float(round(10 ** rng.uniform(3, 6))), table=f"t{i}")
                for i in range(n)]
    while len(subtrees) > 1:
        build_side = subtrees.pop(rng.randrange(len(subtrees)))
        probe_side = subtrees.pop(rng.randrange(len(subtrees)))
        build = add("HashBuild", ops[build_side].est_out_rows, [build_side])
        rows = max(ops[probe_side].est_out_rows, ops[build_side].est_out_rows)
        rows *= rng.uniform(0.2, 1.2)
        subtrees.append(add("HashProbe", float(round(rows)), [build, probe_side]))
    top = subtrees[0]
    if sink_ops and rng.random() < 0.5:
        top = add("Filter", ops[top].est_out_rows * rng.uniform(0.1, 1.0), [top])
    if sink_ops and rng.random() < 0.7:
        top = add("Aggregate", max(1.0, ops[top].est_out_rows * 0.01), [top])
    return load_plan(serialize_plan(PlanDAG(operators=ops, root=top)))


LEFT_DEEP_4T = (
    "agg(join(join(join("
    "scan(R0, rows=1e6), scan(R1, rows=1e6), rows=1e6), "
    "scan(R2, rows=2e6), rows=8e6), "
    "scan(R3, rows=4e6), rows=1e7), rows=1e3)"
)
