"""Morsel-level replay of a planned query against scenario truth.

True cardinalities replace estimates; the DOP monitor compares what each
pipeline observes (input size, per-operator fanout, flow rate) with the
planned values and either adjusts that pipeline's DOP locally or replans
every remaining pipeline.  Resizes take effect after the hardware's resize
delay, and both the old and new allocations are charged during the
transition window.

A pipeline's true input size is treated as observable at pipeline start
(scans read storage metadata; other pipeline sources consume a
materialized breaker output of known size), so input deviation is
detectable at the first monitor check.
"""

from __future__ import annotations

import enum
import heapq
import math
import random
from dataclasses import dataclass

from .estimator import (HardwareProfile, SECONDS_PER_HOUR, SimEstimate,
                        PipelineEstimate, schedule_pipelines, simulate_query)
from .planner import DOPAssignment, MODE_SLA, UserConstraint, optimize_work
from .plans import PlanDAG, extract_pipelines, per_operator_rows


class ScenarioError(ValueError):
    pass


class Action(enum.Enum):
    NONE = "none"
    LOCAL_ADJUST = "local"
    REPLAN = "replan"


@dataclass(frozen=True)
class Scenario:
    plan: PlanDAG
    true_rows: dict[str, float]
    seed: int = 0


@dataclass(frozen=True)
class MonitorPolicy:
    theta_local: float = 1.25
    theta_replan: float = 2.0
    check_every_morsels: int = 4

    def __post_init__(self):
        if not (1.0 < self.theta_local < self.theta_replan):
            raise ValueError("need 1 < theta_local < theta_replan")
        if self.check_every_morsels < 1:
            raise ValueError("check_every_morsels must be >= 1")


@dataclass(frozen=True)
class ResizeEvent:
    time_s: float
    pipeline: int
    old_dop: int
    new_dop: int
    reason: str  # "local" | "replan"


@dataclass(frozen=True)
class TraceEvent:
    time_s: float
    pipeline: int
    event: str
    dop: int
    rows: float


@dataclass(frozen=True)
class PipelineActual:
    alloc_s: float
    start_s: float
    finish_s: float
    final_dop: int
    node_seconds: float


@dataclass(frozen=True)
class ExecReport:
    actual_latency_s: float
    actual_dollars: float
    machine_time_s: float
    blocked_s: float
    resize_events: tuple[ResizeEvent, ...]
    replans: int
    sla_met: bool
    trace: tuple[TraceEvent, ...]
    per_pipeline: dict[int, PipelineActual]


@dataclass
class PipelineProgress:
    """Snapshot of one running pipeline handed to the monitor."""
    pipeline_id: int
    dop: int
    now_s: float
    planned_finish_s: float
    input_rows_total: float
    rows_done: float
    ops: tuple[tuple[str, float], ...]            # observed (kind, total rows)
    expected_input: float
    expected_ops: tuple[tuple[str, float], ...]   # planned (kind, total rows)
    obs_rate: float | None = None
    pred_rate: float | None = None
    remaining_budget_dollars: float | None = None


def _ratio(a: float, b: float) -> float:
    if a <= 0.0 and b <= 0.0:
        return 1.0
    if a <= 0.0 or b <= 0.0:
        return math.inf
    return max(a / b, b / a)


def deviation_ratio(progress: PipelineProgress) -> float:
    """Symmetric deviation over input size, per-operator fanout, and flow
    rate; >= 1, with 1 meaning everything matches the plan."""
    rho = _ratio(progress.input_rows_total, progress.expected_input)
    if progress.input_rows_total > 0 and progress.expected_input > 0:
        for (_, rows), (_, erows) in zip(progress.ops, progress.expected_ops):
            rho = max(rho, _ratio(rows / progress.input_rows_total,
                                  erows / progress.expected_input))
    if progress.obs_rate is not None and progress.pred_rate is not None:
        rho = max(rho, _ratio(progress.obs_rate, progress.pred_rate))
    return rho


def classify(rho: float, policy: MonitorPolicy) -> Action:
    if rho <= policy.theta_local:
        return Action.NONE
    if rho <= policy.theta_replan:
        return Action.LOCAL_ADJUST
    return Action.REPLAN


def monitor_step(progress: PipelineProgress, policy: MonitorPolicy) -> Action:
    return classify(deviation_ratio(progress), policy)


def _remaining_time(progress_ops, input_total: float, rows_done: float,
                    dop: int, hw: HardwareProfile) -> float:
    if input_total <= 0:
        return 0.0
    frac = max(0.0, input_total - rows_done) / input_total
    worst = 0.0
    for kind, rows in progress_ops:
        if rows <= 0:
            continue
        worst = max(worst, rows * frac / hw.model_for(kind).throughput(dop))
    return worst


def local_adjust(progress: PipelineProgress, constraint: UserConstraint,
                 hw: HardwareProfile) -> int:
    """Smallest DOP that still meets the pipeline's planned finish (SLA
    mode), or the largest DOP the remaining budget affords (budget mode).
    Returns the current DOP when nothing remains."""
    remaining = progress.input_rows_total - progress.rows_done
    if remaining <= 0:
        return progress.dop

    def t_rem(d: int) -> float:
        return _remaining_time(progress.ops, progress.input_rows_total,
                               progress.rows_done, d, hw)

    if constraint.mode == MODE_SLA:
        slack = progress.planned_finish_s - progress.now_s - hw.resize_delay_s
        if slack <= 0:
            return constraint.dop_max
        for d in range(1, constraint.dop_max + 1):
            if t_rem(d) <= slack:
                return d
        return constraint.dop_max

    budget = progress.remaining_budget_dollars
    if budget is None:
        return progress.dop
    price = hw.node_price_per_hour / SECONDS_PER_HOUR
    best = 1
    for d in range(1, constraint.dop_max + 1):
        cost = d * t_rem(d) * price
        if d != progress.dop:
            cost += (d + progress.dop) * hw.resize_delay_s * price
        if cost <= budget:
            best = d
    return best


# --- replanning -------------------------------------------------------------

@dataclass(frozen=True)
class RunningState:
    dop: int
    rows_done: float


@dataclass(frozen=True)
class ReplanSnapshot:
    """Run-time statistics at the moment a replan triggers: corrected
    per-operator cardinalities, sunk cost, and per-pipeline progress."""
    plan: PlanDAG
    elapsed_s: float
    spent_dollars: float
    corrected_cards: dict[str, float]
    finished: frozenset[int]
    running: dict[int, RunningState]


class _ResidualWork:
    """Duck-typed QueryWork over the not-yet-finished pipelines."""

    def __init__(self, snapshot: ReplanSnapshot, hw: HardwareProfile):
        self.hw = hw
        plan = snapshot.plan
        cards = snapshot.corrected_cards
        self.deps = {}
        self._ops: dict[int, list[tuple[str, float]]] = {}
        self._running = snapshot.running
        for pid, pipe in plan.pipelines.items():
            if pid in snapshot.finished:
                continue
            self.deps[pid] = frozenset(d for d in pipe.deps
                                       if d not in snapshot.finished)
            source = plan.operators[pipe.operators[0]]
            if source.kind in ("TableScan", "MVScan"):
                incoming = cards[source.id]
            elif source.kind == "Union":
                incoming = sum(cards[c] for c in source.children)
            elif source.kind == "HashProbe":
                incoming = cards[source.children[1]]
            else:
                incoming = cards[source.children[0]]
            ops = []
            for op_id in pipe.operators:
                ops.append((plan.operators[op_id].kind, incoming))
                incoming = cards[op_id]
            self._ops[pid] = ops
        self._input = {pid: (ops[0][1] if ops else 0.0)
                       for pid, ops in self._ops.items()}
        self._memo: dict[tuple[int, int], float] = {}

    def pipeline_ids(self) -> list[int]:
        return sorted(self.deps)

    def duration(self, pid: int, dop: int) -> float:
        key = (pid, dop)
        cached = self._memo.get(key)
        if cached is not None:
            return cached
        state = self._running.get(pid)
        done = state.rows_done if state else 0.0
        dur = _remaining_time(self._ops[pid], self._input[pid], done, dop, self.hw)
        if state is not None and dop != state.dop:
            dur += self.hw.resize_delay_s  # switch lag before the new rate
        self._memo[key] = dur
        return dur


def replan_remaining(snapshot: ReplanSnapshot, constraint: UserConstraint,
                     hw: HardwareProfile) -> DOPAssignment:
    """Re-run the DOP planner over the remaining pipelines with corrected
    cardinalities; completed work is sunk (SLA and budget are reduced by
    what execution already consumed)."""
    if constraint.mode == MODE_SLA:
        residual = UserConstraint(
            mode=MODE_SLA,
            latency_sla_s=max(constraint.latency_sla_s - snapshot.elapsed_s, 1e-9),
            dop_max=constraint.dop_max)
    else:
        residual = UserConstraint(
            mode=constraint.mode,
            budget_dollars=max(constraint.budget_dollars - snapshot.spent_dollars, 1e-9),
            dop_max=constraint.dop_max)
    work = _ResidualWork(snapshot, hw)
    dops, feasible = optimize_work(work, residual)
    durations = {pid: work.duration(pid, dops[pid]) for pid in work.pipeline_ids()}
    sched = schedule_pipelines(work.deps, durations)
    per = {}
    machine = 0.0
    latency = 0.0
    for pid in work.pipeline_ids():
        start, finish = sched[pid]
        node_s = dops[pid] * (finish - start)
        machine += node_s
        latency = max(latency, finish)
        per[pid] = PipelineEstimate(start_s=start, finish_s=finish,
                                    alloc_s=start, dop=dops[pid],
                                    node_seconds=node_s)
    estimate = SimEstimate(latency_s=latency, machine_time_s=machine,
                           blocked_s=0.0,
                           dollars=machine * hw.node_price_per_hour / SECONDS_PER_HOUR,
                           per_pipeline=per)
    return DOPAssignment(dops=dops, estimate=estimate, feasible=feasible)


# --- replay engine ----------------------------------------------------------

_WAITING, _RUNNING, _DONE = 0, 1, 2


class _Run:
    __slots__ = (
        "pid", "deps", "dependents", "ops_true", "ops_est", "input_true",
        "input_est", "state", "dop", "planned_dop", "planned_alloc",
        "planned_finish", "segments", "pending", "morsels_total",
        "morsels_done", "rows_done", "cur_morsel", "epoch", "alloc_t",
        "start_t", "finish_t", "window_t0", "window_rows", "learned",
        "jitter", "rng", "blocked_node_s",
    )

    def __init__(self):
        self.state = _WAITING
        self.segments: list[list] = []   # [t0, t1 | None, dop]
        self.pending: tuple[float, int] | None = None
        self.morsels_done = 0
        self.rows_done = 0.0
        self.cur_morsel = None           # (t_start, rows)
        self.epoch = 0
        self.window_rows = 0.0
        self.learned = False
        self.jitter: list[float] = []
        self.blocked_node_s = 0.0
        self.finish_t = 0.0


class _Engine:
    def __init__(self, scenario: Scenario, assignment: DOPAssignment,
                 constraint: UserConstraint, policy: MonitorPolicy,
                 hw: HardwareProfile):
        plan = scenario.plan
        if not plan.pipelines:
            plan = extract_pipelines(plan)
        for op_id in plan.operators:
            if op_id not in scenario.true_rows:
                raise ScenarioError(f"true_rows missing operator '{op_id}'")
        self.plan = plan
        self.scenario = scenario
        self.constraint = constraint
        self.policy = policy
        self.hw = hw
        self.replans = 0
        self.resize_events: list[ResizeEvent] = []
        self.trace: list[TraceEvent] = []
        self._heap: list = []
        self._seq = 0
        self._dur_memo: dict[tuple[int, int], float] = {}

        planned = assignment.estimate
        self.runs: dict[int, _Run] = {}
        dependents: dict[int, list[int]] = {pid: [] for pid in plan.pipelines}
        for pid, pipe in plan.pipelines.items():
            for d in pipe.deps:
                dependents[d].append(pid)
        for pid in sorted(plan.pipelines):
            pipe = plan.pipelines[pid]
            run = _Run()
            run.pid = pid
            run.deps = set(pipe.deps)
            run.dependents = sorted(dependents[pid])
            run.ops_true = self._true_op_rows(pipe)
            run.ops_est = [(plan.operators[o].kind, r)
                           for o, r in per_operator_rows(plan, pipe)]
            run.input_true = run.ops_true[0][1] if run.ops_true else 0.0
            run.input_est = pipe.input_rows_est
            run.planned_dop = assignment.dops[pid]
            run.dop = run.planned_dop
            est = planned.per_pipeline[pid]
            run.planned_alloc = est.alloc_s
            run.planned_finish = est.finish_s
            run.morsels_total = (0 if run.input_true <= 0 else
                                 math.ceil(run.input_true / hw.morsel_rows))
            run.rng = random.Random(scenario.seed * 1_000_003 + pid) \
                if scenario.seed else None
            self.runs[pid] = run

    # -- helpers ----------------------------------------------------------

    def _true_op_rows(self, pipe) -> list[tuple[str, float]]:
        plan, truth = self.plan, self.scenario.true_rows
        source = plan.operators[pipe.operators[0]]
        if source.kind in ("TableScan", "MVScan"):
            incoming = truth[source.id]
        elif source.kind == "Union":
            incoming = sum(truth[c] for c in source.children)
        elif source.kind == "HashProbe":
            incoming = truth[source.children[1]]
        else:
            incoming = truth[source.children[0]]
        out = []
        for op_id in pipe.operators:
            out.append((plan.operators[op_id].kind, incoming))
            incoming = truth[op_id]
        return out

    def _true_duration(self, run: _Run, dop: int) -> float:
        key = (run.pid, dop)
        cached = self._dur_memo.get(key)
        if cached is None:
            cached = 0.0
            for kind, rows in run.ops_true:
                if rows > 0:
                    cached = max(cached, rows / self.hw.model_for(kind).throughput(dop))
            self._dur_memo[key] = cached
        return cached

    def _expected_duration(self, run: _Run, dop: int) -> float:
        worst = 0.0
        for kind, rows in run.ops_est:
            if rows > 0:
                worst = max(worst, rows / self.hw.model_for(kind).throughput(dop))
        return worst

    def _push(self, t: float, rank: int, pid: int, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, rank, pid, self._seq, payload))

    def _note(self, t: float, pid: int, event: str, dop: int, rows: float = 0.0):
        self.trace.append(TraceEvent(t, pid, event, dop, rows))

    def _jitter(self, run: _Run, idx: int) -> float:
        if run.rng is None:
            return 1.0
        while len(run.jitter) <= idx:
            run.jitter.append(1.0 + 0.05 * (2.0 * run.rng.random() - 1.0))
        return run.jitter[idx]

    def _spent_dollars(self, t: float) -> float:
        machine = 0.0
        for pid in sorted(self.runs):
            for t0, t1, dop in self.runs[pid].segments:
                end = t if t1 is None else min(t1, t)
                if end > t0:
                    machine += dop * (end - t0)
        return machine * self.hw.node_price_per_hour / SECONDS_PER_HOUR

    # -- event handlers -----------------------------------------------------

    def _make_ready(self, run: _Run, t: float) -> None:
        run.alloc_t = min(run.planned_alloc, t)
        run.blocked_node_s = run.planned_dop * (t - run.alloc_t)
        run.segments.append([run.alloc_t, None, run.planned_dop])
        run.dop = run.planned_dop
        self._note(run.alloc_t, run.pid, "alloc", run.planned_dop)
        self._push(t, 0, run.pid)

    def _start(self, run: _Run, t: float) -> None:
        run.state = _RUNNING
        run.start_t = t
        run.window_t0 = t
        run.window_rows = 0.0
        self._note(t, run.pid, "start", run.dop, run.input_true)
        if run.morsels_total == 0:
            self._complete(run, t)
        else:
            self._schedule_morsel(run, t)

    def _morsel_rows(self, run: _Run, idx: int) -> float:
        if idx < run.morsels_total - 1:
            return self.hw.morsel_rows
        return run.input_true - self.hw.morsel_rows * (run.morsels_total - 1)

    def _schedule_morsel(self, run: _Run, t: float) -> None:
        idx = run.morsels_done
        rows = self._morsel_rows(run, idx)
        jit = self._jitter(run, idx)
        share = rows / run.input_true
        dur = self._true_duration(run, run.dop) * share * jit
        if run.pending is not None and run.pending[0] < t + dur:
            effect, new_dop = run.pending
            frac = (effect - t) / dur if dur > 0 else 1.0
            dur_new = self._true_duration(run, new_dop) * share * jit
            dur = (effect - t) + (1.0 - frac) * dur_new
        run.cur_morsel = (t, rows)
        run.epoch += 1
        self._push(t + dur, 2, run.pid, run.epoch)

    def _reschedule_inflight(self, run: _Run, now: float) -> None:
        """A resize landed mid-morsel: recompute its completion piecewise."""
        t0, rows = run.cur_morsel
        idx = run.morsels_done
        jit = self._jitter(run, idx)
        share = rows / run.input_true
        dur_old = self._true_duration(run, run.dop) * share * jit
        effect, new_dop = run.pending
        if effect >= t0 + dur_old:
            return
        frac = (effect - t0) / dur_old if dur_old > 0 else 1.0
        dur_new = self._true_duration(run, new_dop) * share * jit
        end = effect + (1.0 - frac) * dur_new
        run.epoch += 1
        self._push(max(end, now), 2, run.pid, run.epoch)

    def _request_resize(self, run: _Run, t: float, new_dop: int, reason: str) -> None:
        self.resize_events.append(ResizeEvent(t, run.pid, run.dop, new_dop, reason))
        self._note(t, run.pid, "resize_request", new_dop)
        run.segments.append([t, None, new_dop])
        effect = t + self.hw.resize_delay_s
        run.pending = (effect, new_dop)
        self._push(effect, 1, run.pid)
        if run.cur_morsel is not None:
            self._reschedule_inflight(run, t)

    def _apply_resize(self, run: _Run, t: float) -> None:
        if run.state == _DONE or run.pending is None or run.pending[0] > t:
            return
        new_dop = run.pending[1]
        for seg in run.segments[:-1]:
            if seg[1] is None:
                seg[1] = t
        run.dop = new_dop
        run.pending = None
        run.window_t0 = t
        run.window_rows = 0.0
        self._note(t, run.pid, "resize_effect", new_dop)

    def _progress(self, run: _Run, t: float) -> PipelineProgress:
        obs_rate = None
        if run.state == _RUNNING and t > run.window_t0 and run.window_rows > 0:
            obs_rate = run.window_rows / (t - run.window_t0)
        pred_rate = None
        exp_dur = self._expected_duration(run, run.dop)
        if exp_dur > 0 and run.input_est > 0:
            pred_rate = run.input_est / exp_dur
        budget = None
        if self.constraint.mode != MODE_SLA:
            budget = max(self.constraint.budget_dollars - self._spent_dollars(t), 0.0)
        return PipelineProgress(
            pipeline_id=run.pid, dop=run.dop, now_s=t,
            planned_finish_s=run.planned_finish,
            input_rows_total=run.input_true, rows_done=run.rows_done,
            ops=tuple(run.ops_true), expected_input=run.input_est,
            expected_ops=tuple(run.ops_est),
            obs_rate=obs_rate, pred_rate=pred_rate,
            remaining_budget_dollars=budget)

    def _learn(self, run: _Run) -> None:
        run.input_est = run.input_true
        run.ops_est = list(run.ops_true)
        run.learned = True

    def _check(self, run: _Run, t: float) -> None:
        action = monitor_step(self._progress(run, t), self.policy)
        if action is Action.NONE:
            return
        self._learn(run)
        if action is Action.LOCAL_ADJUST:
            if run.state == _DONE or run.pending is not None:
                return
            new_dop = local_adjust(self._progress(run, t), self.constraint, self.hw)
            if new_dop != run.dop and run.rows_done < run.input_true:
                self._request_resize(run, t, new_dop, "local")
        else:
            self._replan(t)

    def _replan(self, now: float) -> None:
        self.replans += 1
        self._note(now, -1, "replan", 0)
        plan = self.plan
        cards: dict[str, float] = {}
        for pid in sorted(self.runs):
            run = self.runs[pid]
            pipe = plan.pipelines[pid]
            if run.state != _WAITING:
                for op_id in pipe.operators:
                    cards[op_id] = self.scenario.true_rows[op_id]
            else:
                source = plan.operators[pipe.operators[0]]
                if source.kind in ("TableScan", "MVScan"):
                    corrected_in = self.scenario.true_rows[source.id]
                elif source.kind == "Union":
                    corrected_in = sum(cards.get(c, plan.operators[c].est_out_rows)
                                       for c in source.children)
                elif source.kind == "HashProbe":
                    c = source.children[1]
                    corrected_in = cards.get(c, plan.operators[c].est_out_rows)
                else:
                    c = source.children[0]
                    corrected_in = cards.get(c, plan.operators[c].est_out_rows)
                factor = (corrected_in / pipe.input_rows_est
                          if pipe.input_rows_est > 0 else 1.0)
                for op_id in pipe.operators:
                    cards[op_id] = plan.operators[op_id].est_out_rows * factor
                run.input_est = corrected_in
                run.ops_est = []
                incoming = corrected_in
                for op_id in pipe.operators:
                    run.ops_est.append((plan.operators[op_id].kind, incoming))
                    incoming = cards[op_id]

        snapshot = ReplanSnapshot(
            plan=plan, elapsed_s=now, spent_dollars=self._spent_dollars(now),
            corrected_cards=cards,
            finished=frozenset(p for p, r in self.runs.items() if r.state == _DONE),
            running={p: RunningState(dop=r.dop, rows_done=r.rows_done)
                     for p, r in self.runs.items() if r.state == _RUNNING})
        result = replan_remaining(snapshot, self.constraint, self.hw)
        for pid in sorted(result.dops):
            run = self.runs[pid]
            est = result.estimate.per_pipeline[pid]
            run.planned_finish = now + est.finish_s
            if run.state == _RUNNING:
                if result.dops[pid] != run.dop and run.pending is None:
                    self._request_resize(run, now, result.dops[pid], "replan")
            else:
                run.planned_dop = result.dops[pid]
                run.planned_alloc = now + est.alloc_s

    def _complete(self, run: _Run, t: float) -> None:
        run.state = _DONE
        run.finish_t = t
        for seg in run.segments:
            if seg[1] is None:
                seg[1] = t
        run.pending = None
        run.epoch += 1
        self._note(t, run.pid, "finish", run.dop, run.rows_done)
        self._check(run, t)
        for q in run.dependents:
            dep = self.runs[q]
            if dep.state == _WAITING and all(
                    self.runs[d].state == _DONE for d in dep.deps):
                self._make_ready(dep, t)

    def _morsel_done(self, run: _Run, t: float, epoch: int) -> None:
        if run.state != _RUNNING or epoch != run.epoch:
            return
        _, rows = run.cur_morsel
        run.cur_morsel = None
        run.morsels_done += 1
        run.rows_done += rows
        run.window_rows += rows
        if run.morsels_done >= run.morsels_total:
            self._complete(run, t)
            return
        if run.morsels_done % self.policy.check_every_morsels == 0:
            self._check(run, t)
            if run.state != _RUNNING:   # a replan cannot finish us, but be safe
                return
        self._schedule_morsel(run, t)

    # -- main loop ----------------------------------------------------------

    def run(self) -> ExecReport:
        for pid in sorted(self.runs):
            if not self.runs[pid].deps:
                self._make_ready(self.runs[pid], 0.0)
        while self._heap:
            t, rank, pid, _, payload = heapq.heappop(self._heap)
            run = self.runs[pid] if pid >= 0 else None
            if rank == 0:
                self._start(run, t)
            elif rank == 1:
                self._apply_resize(run, t)
            else:
                self._morsel_done(run, t, payload)

        stuck = [p for p, r in self.runs.items() if r.state != _DONE]
        if stuck:
            raise ScenarioError(f"pipelines never completed: {sorted(stuck)}")

        machine = 0.0
        blocked = 0.0
        latency = 0.0
        per: dict[int, PipelineActual] = {}
        for pid in sorted(self.runs):
            run = self.runs[pid]
            node_s = sum(dop * (t1 - t0) for t0, t1, dop in run.segments)
            machine += node_s
            blocked += run.blocked_node_s
            latency = max(latency, run.finish_t)
            per[pid] = PipelineActual(alloc_s=run.alloc_t, start_s=run.start_t,
                                      finish_s=run.finish_t, final_dop=run.dop,
                                      node_seconds=node_s)
        dollars = machine * self.hw.node_price_per_hour / SECONDS_PER_HOUR
        if self.constraint.mode == MODE_SLA:
            met = latency <= self.constraint.latency_sla_s * (1.0 + 1e-9)
        else:
            met = dollars <= self.constraint.budget_dollars * (1.0 + 1e-9)
        return ExecReport(
            actual_latency_s=latency, actual_dollars=dollars,
            machine_time_s=machine, blocked_s=blocked,
            resize_events=tuple(self.resize_events), replans=self.replans,
            sla_met=met, trace=tuple(self.trace), per_pipeline=per)


def run(scenario: Scenario, dops, constraint: UserConstraint,
        policy: MonitorPolicy, hw: HardwareProfile) -> ExecReport:
    """Replay a planned query against scenario truth with runtime DOP
    correction.  Deterministic for a fixed scenario seed."""
    plan = scenario.plan if scenario.plan.pipelines else extract_pipelines(scenario.plan)
    scenario = Scenario(plan=plan, true_rows=scenario.true_rows, seed=scenario.seed)
    if isinstance(dops, DOPAssignment):
        assignment = dops
    else:
        assignment = DOPAssignment(dops=dict(dops),
                                   estimate=simulate_query(plan, dops, hw),
                                   feasible=True)
    return _Engine(scenario, assignment, constraint, policy, hw).run()
