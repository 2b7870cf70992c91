"""Distributed plan representation: operator trees, the plan DSL, and the
decomposition of a plan into pipelines separated by blocking operators.

A plan document is JSON (``{"operators": [...], "root": ...}``) or the
shorthand call syntax (``agg(join(scan(A, rows=1e6), scan(B, rows=2e5),
rows=1e6), rows=10)``).  Both parse to the same validated ``PlanDAG``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

OP_KINDS = frozenset({
    "TableScan", "Filter", "Project", "HashBuild", "HashProbe",
    "Aggregate", "Sort", "Exchange", "Union", "MVScan",
})

# Operators that must consume all input before emitting any output.
BREAKER_KINDS = frozenset({"HashBuild", "Aggregate", "Sort", "Exchange"})

LEAF_KINDS = frozenset({"TableScan", "MVScan"})

#: breaker_kind used for pipelines that end without a blocking operator
#: (the sink pipeline, or a chain cut off by a structurally blocked edge).
SINK = "Sink"

DEFAULT_ROW_BYTES = 8.0


class PlanError(ValueError):
    """Base class for plan parsing/validation failures."""


class PlanSyntaxError(PlanError):
    def __init__(self, message: str, line: int = 1, col: int = 1):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class PlanValidationError(PlanError):
    def __init__(self, message: str, node_id: str | None = None):
        if node_id is not None:
            message = f"operator '{node_id}': {message}"
        super().__init__(message)
        self.node_id = node_id


@dataclass(frozen=True)
class OperatorNode:
    """One physical operator.  ``children`` are the operators feeding it."""

    id: str
    kind: str
    est_out_rows: float
    row_bytes: float = DEFAULT_ROW_BYTES
    children: tuple[str, ...] = ()
    table: str | None = None
    attrs: tuple[str, ...] = ()
    # Physical rows a scan reads (defaults to est_out_rows); reclustering
    # rewrites lower this without touching the emitted cardinality.
    read_rows: float | None = None


@dataclass(frozen=True)
class Pipeline:
    """Maximal chain of streaming operators ending at a breaker or the sink."""

    id: int
    operators: tuple[str, ...]
    breaker_kind: str
    deps: frozenset[int]
    input_rows_est: float


@dataclass(frozen=True)
class PlanDAG:
    operators: dict[str, OperatorNode]
    root: str
    pipelines: dict[int, Pipeline] = field(default_factory=dict)

    def parent_map(self) -> dict[str, str]:
        parents: dict[str, str] = {}
        for op in self.operators.values():
            for child in op.children:
                parents[child] = op.id
        return parents

    def pipeline_of(self) -> dict[str, int]:
        owner: dict[str, int] = {}
        for pipe in self.pipelines.values():
            for op_id in pipe.operators:
                owner[op_id] = pipe.id
        return owner


def _validate(operators: dict[str, OperatorNode], root: str) -> None:
    if root not in operators:
        raise PlanValidationError(f"root '{root}' is not a defined operator")

    for op in operators.values():
        if op.kind not in OP_KINDS:
            raise PlanValidationError(f"unknown kind '{op.kind}'", op.id)
        if not math.isfinite(op.est_out_rows) or op.est_out_rows < 0:
            raise PlanValidationError(
                f"est_out_rows must be finite and >= 0, got {op.est_out_rows}", op.id)
        if not math.isfinite(op.row_bytes) or op.row_bytes <= 0:
            raise PlanValidationError(
                f"row_bytes must be finite and > 0, got {op.row_bytes}", op.id)
        if op.read_rows is not None and (not math.isfinite(op.read_rows) or op.read_rows < 0):
            raise PlanValidationError(
                f"read_rows must be finite and >= 0, got {op.read_rows}", op.id)
        for child in op.children:
            if child not in operators:
                raise PlanValidationError(f"child '{child}' is not defined", op.id)

        n = len(op.children)
        if op.kind in LEAF_KINDS and n != 0:
            raise PlanValidationError(f"{op.kind} takes no children, got {n}", op.id)
        elif op.kind == "HashProbe" and n != 2:
            raise PlanValidationError(
                f"HashProbe takes exactly 2 children (build, probe), got {n}", op.id)
        elif op.kind == "Union" and n < 2:
            raise PlanValidationError(f"Union takes >= 2 children, got {n}", op.id)
        elif op.kind not in LEAF_KINDS and op.kind not in ("HashProbe", "Union") and n != 1:
            raise PlanValidationError(f"{op.kind} takes exactly 1 child, got {n}", op.id)

    # Cycle detection over the child graph (reports a node on the cycle).
    WHITE, GREY, BLACK = 0, 1, 2
    color = {op_id: WHITE for op_id in operators}
    for start in sorted(operators):
        if color[start] != WHITE:
            continue
        stack: list[tuple[str, int]] = [(start, 0)]
        color[start] = GREY
        while stack:
            node, idx = stack[-1]
            children = operators[node].children
            if idx < len(children):
                stack[-1] = (node, idx + 1)
                child = children[idx]
                if color[child] == GREY:
                    raise PlanValidationError("cycle detected through this operator", child)
                if color[child] == WHITE:
                    color[child] = GREY
                    stack.append((child, 0))
            else:
                color[node] = BLACK
                stack.pop()

    # Exactly one root: every non-root operator is consumed exactly once.
    ref_count: dict[str, int] = {op_id: 0 for op_id in operators}
    for op in operators.values():
        for child in op.children:
            ref_count[child] += 1
    for op_id in sorted(operators):
        refs = ref_count[op_id]
        if op_id == root:
            if refs != 0:
                raise PlanValidationError("root must not be consumed by another operator", op_id)
        elif refs == 0:
            raise PlanValidationError("unreachable operator (second root?)", op_id)
        elif refs > 1:
            raise PlanValidationError(
                f"operator consumed by {refs} parents; plans must be trees", op_id)


def _node_from_dict(raw: dict, index: int) -> OperatorNode:
    if not isinstance(raw, dict):
        raise PlanValidationError(f"operators[{index}] is not an object")
    try:
        op_id = raw["id"]
        kind = raw["kind"]
        est = raw["est_out_rows"]
    except KeyError as exc:
        raise PlanValidationError(
            f"operators[{index}] missing required field {exc}") from None
    attrs = raw.get("attrs", ())
    children = raw.get("children", ())
    return OperatorNode(
        id=str(op_id),
        kind=str(kind),
        est_out_rows=float(est),
        row_bytes=float(raw.get("row_bytes", DEFAULT_ROW_BYTES)),
        children=tuple(str(c) for c in children),
        table=raw.get("table"),
        attrs=tuple(str(a) for a in attrs),
        read_rows=None if raw.get("read_rows") is None else float(raw["read_rows"]),
    )


def _parse_json_plan(text: str) -> PlanDAG:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict) or "operators" not in doc or "root" not in doc:
        raise PlanValidationError("plan document needs 'operators' and 'root' fields")
    operators: dict[str, OperatorNode] = {}
    for i, raw in enumerate(doc["operators"]):
        node = _node_from_dict(raw, i)
        if node.id in operators:
            raise PlanValidationError("duplicate operator id", node.id)
        operators[node.id] = node
    return PlanDAG(operators=operators, root=str(doc["root"]))


# --- shorthand parser ----------------------------------------------------

_SHORTHAND_KINDS = {
    "scan": "TableScan",
    "mvscan": "MVScan",
    "filter": "Filter",
    "project": "Project",
    "build": "HashBuild",
    "probe": "HashProbe",
    "agg": "Aggregate",
    "aggregate": "Aggregate",
    "sort": "Sort",
    "exchange": "Exchange",
    "union": "Union",
    "join": "join",  # sugar: join(l, r, ...) -> probe(build(r), l, ...)
}


class _Tokens:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _advance_over_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def line_col(self, pos: int | None = None) -> tuple[int, int]:
        pos = self.pos if pos is None else pos
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def error(self, message: str, pos: int | None = None) -> PlanSyntaxError:
        line, col = self.line_col(pos)
        return PlanSyntaxError(message, line, col)

    def peek(self) -> str:
        self._advance_over_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            got = self.peek() or "end of input"
            raise self.error(f"expected '{ch}', got '{got}'")
        self.pos += 1

    def name(self) -> str:
        self._advance_over_ws()
        start = self.pos
        while self.pos < len(self.text) and (
                self.text[self.pos].isalnum() or self.text[self.pos] in "_."):
            self.pos += 1
        if self.pos == start:
            raise self.error("expected a name")
        return self.text[start:self.pos]

    def number(self) -> float:
        self._advance_over_ws()
        start = self.pos
        while self.pos < len(self.text) and (
                self.text[self.pos].isdigit() or self.text[self.pos] in "+-.eE_"):
            self.pos += 1
        token = self.text[start:self.pos].replace("_", "")
        try:
            return float(token)
        except ValueError:
            raise self.error(f"bad number '{token}'", start) from None

    def string(self) -> str:
        quote = self.peek()
        self.pos += 1
        end = self.text.find(quote, self.pos)
        if end < 0:
            raise self.error("unterminated string")
        value = self.text[self.pos:end]
        self.pos = end + 1
        return value


def _parse_shorthand(text: str) -> PlanDAG:
    tokens = _Tokens(text)
    operators: dict[str, OperatorNode] = {}
    counter = [0]

    def fresh_id() -> str:
        op_id = f"n{counter[0]}"
        counter[0] += 1
        return op_id

    def add(kind: str, rows: float, children: tuple[str, ...], *,
            row_bytes: float = DEFAULT_ROW_BYTES, table: str | None = None,
            attrs: tuple[str, ...] = (), read_rows: float | None = None) -> str:
        node = OperatorNode(fresh_id(), kind, rows, row_bytes, children,
                            table, attrs, read_rows)
        operators[node.id] = node
        return node.id

    def parse_call() -> str:
        fn_pos = tokens.pos
        fn = tokens.name().lower()
        if fn not in _SHORTHAND_KINDS:
            raise tokens.error(f"unknown operator '{fn}'", fn_pos)
        tokens.expect("(")
        positional: list[str] = []   # child op ids, or the table name for scans
        kwargs: dict[str, object] = {}
        while tokens.peek() != ")":
            if positional or kwargs:
                tokens.expect(",")
            ch = tokens.peek()
            if ch in "'\"":
                positional.append(tokens.string())
                continue
            mark = tokens.pos
            word = tokens.name()
            if tokens.peek() == "=":
                tokens.pos += 1
                ch = tokens.peek()
                if ch in "'\"":
                    kwargs[word] = tokens.string()
                else:
                    kwargs[word] = tokens.number()
            elif tokens.peek() == "(":
                tokens.pos = mark
                positional.append(parse_call())
            else:
                positional.append(word)
        tokens.expect(")")
        return build_node(fn, positional, kwargs, fn_pos)

    def attr_tuple(kwargs: dict, key: str) -> tuple[str, ...]:
        raw = kwargs.get(key)
        if raw is None:
            return ()
        parts = str(raw).replace("=", ",").split(",")
        return tuple(p.strip() for p in parts if p.strip())

    def child_rows(child_id: str) -> float:
        return operators[child_id].est_out_rows

    def build_node(fn: str, positional: list[str], kwargs: dict, fn_pos: int) -> str:
        bytes_ = float(kwargs.get("bytes", DEFAULT_ROW_BYTES))
        if fn in ("scan", "mvscan"):
            if len(positional) != 1:
                raise tokens.error(f"{fn} takes one table name", fn_pos)
            if "rows" not in kwargs:
                raise tokens.error(f"{fn} requires rows=", fn_pos)
            read = kwargs.get("read_rows")
            return add("TableScan" if fn == "scan" else "MVScan",
                       float(kwargs["rows"]), (), row_bytes=bytes_,
                       table=positional[0], attrs=attr_tuple(kwargs, "attrs"),
                       read_rows=None if read is None else float(read))
        if fn == "union":
            if len(positional) < 2:
                raise tokens.error("union takes >= 2 inputs", fn_pos)
            rows = float(kwargs.get("rows", sum(child_rows(c) for c in positional)))
            return add("Union", rows, tuple(positional), row_bytes=bytes_)
        if fn in ("probe", "join"):
            if len(positional) != 2:
                raise tokens.error(f"{fn} takes two inputs", fn_pos)
            attrs = attr_tuple(kwargs, "on")
            if fn == "join":
                left, right = positional
                build_id = add("HashBuild", child_rows(right), (right,),
                               row_bytes=operators[right].row_bytes)
                children = (build_id, left)
            else:
                children = (positional[0], positional[1])
            rows = float(kwargs.get("rows", child_rows(children[1])))
            return add("HashProbe", rows, children, row_bytes=bytes_, attrs=attrs)
        # unary operators
        if len(positional) != 1:
            raise tokens.error(f"{fn} takes one input", fn_pos)
        child = positional[0]
        rows = float(kwargs.get("rows", child_rows(child)))
        return add(_SHORTHAND_KINDS[fn], rows, (child,), row_bytes=bytes_,
                   attrs=attr_tuple(kwargs, "attrs"))

    root = parse_call()
    if tokens.peek():
        raise tokens.error(f"unexpected trailing input '{tokens.peek()}'")
    return PlanDAG(operators=operators, root=root)


def parse_plan(text: str) -> PlanDAG:
    """Parse a JSON or shorthand plan document into a validated PlanDAG."""
    stripped = text.lstrip()
    if not stripped:
        raise PlanSyntaxError("empty plan document")
    plan = _parse_json_plan(text) if stripped[0] == "{" else _parse_shorthand(text)
    _validate(plan.operators, plan.root)
    return plan


def serialize_plan(plan: PlanDAG) -> str:
    """Canonical JSON form: operators sorted by id, fixed field order."""
    ops = []
    for op_id in sorted(plan.operators):
        op = plan.operators[op_id]
        entry: dict[str, object] = {
            "id": op.id,
            "kind": op.kind,
            "est_out_rows": op.est_out_rows,
            "row_bytes": op.row_bytes,
            "children": list(op.children),
        }
        if op.table is not None:
            entry["table"] = op.table
        if op.attrs:
            entry["attrs"] = list(op.attrs)
        if op.read_rows is not None:
            entry["read_rows"] = op.read_rows
        ops.append(entry)
    return json.dumps({"operators": ops, "root": plan.root}, indent=2) + "\n"


# --- pipeline extraction --------------------------------------------------

def _blocked_edge(child: OperatorNode, parent: OperatorNode) -> bool:
    """True when `parent` cannot consume `child`'s output in streaming fashion."""
    if child.kind in BREAKER_KINDS:
        return True
    if parent.kind == "Union":
        return True
    if parent.kind == "HashProbe" and parent.children[0] == child.id:
        return True
    return False


def _source_input_rows(plan: PlanDAG, source: OperatorNode) -> float:
    if source.kind in LEAF_KINDS:
        return source.read_rows if source.read_rows is not None else source.est_out_rows
    if source.kind == "Union":
        return sum(plan.operators[c].est_out_rows for c in source.children)
    if source.kind == "HashProbe":
        return plan.operators[source.children[1]].est_out_rows
    return plan.operators[source.children[0]].est_out_rows


def extract_pipelines(plan: PlanDAG) -> PlanDAG:
    """Partition operators into maximal streaming chains and compute the
    pipeline dependency edges (blocked inputs).

    Pipeline ids are assigned topologically (dependencies first), ties broken
    by smallest source operator id, so numbering is stable for any operator
    insertion order.
    """
    parents = plan.parent_map()

    def streaming_child(op: OperatorNode) -> str | None:
        for child_id in op.children:
            if not _blocked_edge(plan.operators[child_id], op):
                return child_id
        return None

    # Chain sources: operators that do not continue another chain.
    chains: list[list[str]] = []
    for op_id, op in plan.operators.items():
        if streaming_child(op) is not None:
            continue
        chain = [op_id]
        cur = op_id
        while True:
            parent_id = parents.get(cur)
            if parent_id is None:
                break
            parent = plan.operators[parent_id]
            if _blocked_edge(plan.operators[cur], parent):
                break
            chain.append(parent_id)
            cur = parent_id
        chains.append(chain)

    owner_chain: dict[str, int] = {}
    for idx, chain in enumerate(chains):
        for op_id in chain:
            owner_chain[op_id] = idx

    chain_deps: list[set[int]] = [set() for _ in chains]
    for idx, chain in enumerate(chains):
        for op_id in chain:
            op = plan.operators[op_id]
            for child_id in op.children:
                if _blocked_edge(plan.operators[child_id], op):
                    chain_deps[idx].add(owner_chain[child_id])

    # Deterministic topological numbering.
    remaining = set(range(len(chains)))
    assigned: dict[int, int] = {}
    next_id = 0
    while remaining:
        ready = [i for i in remaining if chain_deps[i] <= set(assigned)]
        if not ready:
            raise PlanValidationError("pipeline dependency graph has a cycle")
        ready.sort(key=lambda i: chains[i][0])
        for i in ready:
            assigned[i] = next_id
            next_id += 1
            remaining.discard(i)

    pipelines: dict[int, Pipeline] = {}
    for idx, chain in enumerate(chains):
        pid = assigned[idx]
        terminal = plan.operators[chain[-1]]
        breaker = terminal.kind if terminal.kind in BREAKER_KINDS else SINK
        pipelines[pid] = Pipeline(
            id=pid,
            operators=tuple(chain),
            breaker_kind=breaker,
            deps=frozenset(assigned[d] for d in chain_deps[idx]),
            input_rows_est=_source_input_rows(plan, plan.operators[chain[0]]),
        )
    return replace(plan, pipelines=pipelines)


def per_operator_rows(plan: PlanDAG, pipeline: Pipeline) -> list[tuple[str, float]]:
    """Rows *processed* by each operator of a pipeline: the source sees the
    pipeline's input, each later operator sees its predecessor's output."""
    rows: list[tuple[str, float]] = []
    incoming = pipeline.input_rows_est
    for op_id in pipeline.operators:
        rows.append((op_id, incoming))
        incoming = plan.operators[op_id].est_out_rows
    return rows


def load_plan(text: str) -> PlanDAG:
    """Parse and extract pipelines in one step."""
    return extract_pipelines(parse_plan(text))
