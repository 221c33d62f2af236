"""Offline metrics over profile logs: TTX, overheads, resource utilization.

Individual overheads are the time single runtime operations add to one
task; aggregated overheads combine all instances of an operation across
the workload, accounting for concurrency overlap. Two aggregation
semantics are reported side by side: the measure of the interval union,
and the span from first start to last end (the two differ as soon as
operations leave gaps).

Resource utilization partitions every resource unit's share of the
pilot's lifetime [pilot_start, pilot_stop] into eleven categories, from
agent-node reservation through startup, scheduling warmup, submission
wait, runtime slivers, payload execution, draining and teardown, down
to units that idle through the whole run (unused GPUs, spare cores).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Workload
from .profiler import (
    DVM_JOB,
    EV_AGENT_READY,
    EV_DONE,
    EV_INIT_COMPLETE,
    EV_PILOT_STOP,
    EV_RUNNING,
    EV_SCHEDULE_OK,
    EV_SENDING_LAUNCH_MSG,
    EV_SUBMIT,
    EV_TASK_FAIL,
    EV_UNSCHEDULE,
    EV_WORKLOAD_RECEIVED,
    TASK,
    Event,
)
from .scheduler import ResourcePool, Slot

# utilization categories, in reporting order
CAT_AGENT_NODES = "agent_nodes"
CAT_PILOT_STARTUP = "pilot_startup"
CAT_WARMUP = "warmup"
CAT_PREPARE_EXECUTION = "prepare_execution"
CAT_EXEC_RP = "exec_rp"
CAT_EXEC_DVM = "exec_dvm"
CAT_EXEC_CMD = "exec_cmd"
CAT_UNSCHEDULE = "unschedule"
CAT_DRAINING = "draining"
CAT_PILOT_TERMINATION = "pilot_termination"
CAT_IDLE = "idle"

CATEGORIES = [
    CAT_AGENT_NODES,
    CAT_PILOT_STARTUP,
    CAT_WARMUP,
    CAT_PREPARE_EXECUTION,
    CAT_EXEC_RP,
    CAT_EXEC_DVM,
    CAT_EXEC_CMD,
    CAT_UNSCHEDULE,
    CAT_DRAINING,
    CAT_PILOT_TERMINATION,
    CAT_IDLE,
]


class IncompleteRun(ValueError):
    """The profile log does not describe a completed run."""


class HeterogeneousWorkload(ValueError):
    """ideal_ttx only supports homogeneous workloads."""


@dataclass
class Interval:
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.end_s < self.start_s:
            raise ValueError(f"interval end {self.end_s} < start {self.start_s}")

    @property
    def length(self) -> float:
        return self.end_s - self.start_s


def aggregate_overhead(intervals: Sequence[Interval]) -> tuple[float, float]:
    """(union_s, span_s) of an interval set; empty input gives (0, 0)."""
    if not intervals:
        return (0.0, 0.0)
    ordered = sorted(intervals, key=lambda iv: iv.start_s)
    union = 0.0
    cur_lo, cur_hi = ordered[0].start_s, ordered[0].end_s
    for iv in ordered[1:]:
        if iv.start_s <= cur_hi:
            cur_hi = max(cur_hi, iv.end_s)
        else:
            union += cur_hi - cur_lo
            cur_lo, cur_hi = iv.start_s, iv.end_s
    union += cur_hi - cur_lo
    span = max(iv.end_s for iv in ordered) - ordered[0].start_s
    return (union, span)


@dataclass
class OverheadStats:
    union_s: float = 0.0
    span_s: float = 0.0
    mean_s: float = 0.0
    stddev_s: float = 0.0
    min_s: float = 0.0
    max_s: float = 0.0
    n: int = 0

    @classmethod
    def from_intervals(cls, intervals: Sequence[Interval]) -> "OverheadStats":
        if not intervals:
            return cls()
        union, span = aggregate_overhead(intervals)
        lengths = np.array([iv.length for iv in intervals])
        return cls(
            union_s=union,
            span_s=span,
            mean_s=float(lengths.mean()),
            stddev_s=float(lengths.std()),
            min_s=float(lengths.min()),
            max_s=float(lengths.max()),
            n=len(intervals),
        )


@dataclass
class OverheadReport:
    components: dict[str, OverheadStats]
    joint_union_s: float = 0.0


@dataclass
class UtilizationBreakdown:
    resource_seconds: dict[str, float]
    percents: dict[str, float]
    total_resource_seconds: float
    window_s: float
    n_units: float  # weighted unit count


# -- per-task traces ----------------------------------------------------------


@dataclass
class _TaskTrace:
    uid: str
    t_sched: Optional[float] = None
    t_submit: Optional[float] = None
    wait_s: float = 0.0
    t_init: Optional[float] = None
    t_sending: Optional[float] = None
    t_dvm_run: Optional[float] = None
    t_run: Optional[float] = None
    t_done: Optional[float] = None
    t_fail: Optional[float] = None
    t_unschedule: Optional[float] = None
    slot: Optional[Slot] = None

    @property
    def t_terminal(self) -> Optional[float]:
        return self.t_done if self.t_done is not None else self.t_fail


@dataclass
class _RunMarks:
    t_start: float = 0.0
    t_ready: Optional[float] = None
    t_received: Optional[float] = None
    t_stop: Optional[float] = None


def _scan(events: Iterable[Event]) -> tuple[dict[str, _TaskTrace], _RunMarks]:
    traces: dict[str, _TaskTrace] = {}
    marks = _RunMarks()

    def trace(uid: str) -> _TaskTrace:
        if uid not in traces:
            traces[uid] = _TaskTrace(uid=uid)
        return traces[uid]

    for ev in events:
        if ev.entity_kind == TASK:
            tr = trace(ev.entity_id)
            if ev.name == EV_SCHEDULE_OK:
                tr.t_sched = ev.t_s
                if "slot" in ev.attrs:
                    tr.slot = Slot.decode(ev.attrs["slot"])
            elif ev.name == EV_SUBMIT:
                tr.t_submit = ev.t_s
                tr.wait_s = float(ev.attrs.get("wait", "0"))
            elif ev.name == EV_RUNNING:
                tr.t_run = ev.t_s
            elif ev.name == EV_DONE:
                tr.t_done = ev.t_s
            elif ev.name == EV_TASK_FAIL:
                tr.t_fail = ev.t_s
            elif ev.name == EV_UNSCHEDULE:
                tr.t_unschedule = ev.t_s
        elif ev.entity_kind == DVM_JOB:
            tr = trace(ev.entity_id)
            if ev.name == EV_INIT_COMPLETE:
                tr.t_init = ev.t_s
            elif ev.name == EV_SENDING_LAUNCH_MSG:
                tr.t_sending = ev.t_s
            elif ev.name == EV_RUNNING:
                tr.t_dvm_run = ev.t_s
        else:
            if ev.name == EV_AGENT_READY:
                marks.t_ready = ev.t_s
            elif ev.name == EV_WORKLOAD_RECEIVED:
                marks.t_received = ev.t_s
            elif ev.name == EV_PILOT_STOP:
                marks.t_stop = ev.t_s
    return traces, marks


def _require_complete(marks: _RunMarks) -> None:
    if marks.t_stop is None:
        raise IncompleteRun("profile log has no pilot_stop sentinel")
    if marks.t_ready is None:
        raise IncompleteRun("profile log has no agent_ready event")


# -- headline metrics ---------------------------------------------------------


def compute_ttx(events: Iterable[Event]) -> float:
    """Total execution time: last task completion minus workload arrival."""
    traces, marks = _scan(events)
    _require_complete(marks)
    if marks.t_received is None:
        raise IncompleteRun("profile log has no workload_received event")
    ends = [tr.t_done for tr in traces.values() if tr.t_done is not None]
    if not ends:
        ends = [tr.t_fail for tr in traces.values() if tr.t_fail is not None]
    if not ends:
        raise IncompleteRun("no task reached a terminal state")
    return max(ends) - marks.t_received


def ideal_ttx(workload: Workload, pool: ResourcePool) -> float:
    """Zero-overhead TTX: waves of fully concurrent tasks."""
    specs = workload.tasks
    cores = specs[0].cores
    duration = specs[0].duration_s
    for spec in specs:
        if spec.cores != cores or spec.duration_s != duration:
            raise HeterogeneousWorkload(
                "ideal TTX is defined for homogeneous workloads only"
            )
    if duration is None:
        raise HeterogeneousWorkload("ideal TTX needs simulated durations")
    capacity = pool.total_worker_cores // cores
    if capacity < 1:
        raise HeterogeneousWorkload(
            f"tasks of {cores} cores do not fit the pool"
        )
    waves = math.ceil(len(specs) / capacity)
    return waves * duration


def component_overheads(events: Iterable[Event]) -> OverheadReport:
    """Per-component overhead intervals and their statistics.

    rp: per-task scheduling-to-submission; prrte_wait: the enforced
    inter-submission waits (a sub-component of rp); launcher: submission
    to payload start; dvm_launch_msg: the daemon launch-message leg.
    Overlapping rp/launcher work projects onto TTX as a single overhead,
    so their joint union is reported too, without claiming a TTX
    decomposition.
    """
    traces, marks = _scan(events)
    _require_complete(marks)
    rp, wait, launcher, launch_msg = [], [], [], []
    for tr in traces.values():
        if tr.t_sched is not None and tr.t_submit is not None:
            rp.append(Interval(tr.t_sched, tr.t_submit))
            if tr.wait_s > 0:
                wait.append(Interval(tr.t_submit - tr.wait_s, tr.t_submit))
        if tr.t_submit is not None and tr.t_run is not None:
            launcher.append(Interval(tr.t_submit, tr.t_run))
        if tr.t_sending is not None and tr.t_dvm_run is not None:
            launch_msg.append(Interval(tr.t_sending, tr.t_dvm_run))
    joint, _ = aggregate_overhead(rp + launcher)
    return OverheadReport(
        components={
            "rp": OverheadStats.from_intervals(rp),
            "prrte_wait": OverheadStats.from_intervals(wait),
            "launcher": OverheadStats.from_intervals(launcher),
            "dvm_launch_msg": OverheadStats.from_intervals(launch_msg),
        },
        joint_union_s=joint,
    )


# -- resource utilization -----------------------------------------------------


def _task_segments(tr: _TaskTrace) -> list[tuple[str, float, float]]:
    """Category segments for one task between schedule_ok and unschedule."""
    segs: list[tuple[str, float, float]] = []
    t_term = tr.t_terminal
    if tr.t_sched is None or t_term is None:
        return segs
    end_prep = tr.t_submit if tr.t_submit is not None else t_term
    segs.append((CAT_PREPARE_EXECUTION, tr.t_sched, end_prep))
    if tr.t_submit is not None:
        if tr.t_init is not None:
            segs.append((CAT_EXEC_RP, tr.t_submit, tr.t_init))
            segs.append((CAT_EXEC_DVM, tr.t_init, tr.t_run if tr.t_run is not None else t_term))
        else:
            segs.append((CAT_EXEC_RP, tr.t_submit, tr.t_run if tr.t_run is not None else t_term))
        if tr.t_run is not None:
            segs.append((CAT_EXEC_CMD, tr.t_run, t_term))
    t_freed = tr.t_unschedule if tr.t_unschedule is not None else t_term
    segs.append((CAT_UNSCHEDULE, t_term, t_freed))
    return [(c, a, b) for (c, a, b) in segs if b > a]


def _slot_units(slot: Slot) -> list[tuple[int, str, int]]:
    units = []
    for a in slot.assignments:
        units.extend((a.node_uid, "c", i) for i in a.core_indices)
        units.extend((a.node_uid, "g", i) for i in a.gpu_indices)
    return units


def _unit_weighted_segments(
    events: Iterable[Event], pool: ResourcePool, gpu_weight: float = 1.0
) -> tuple[list[tuple[str, float, float, float]], float, float]:
    """All (category, start, end, weight) segments plus (t_stop, n_units)."""
    traces, marks = _scan(events)
    _require_complete(marks)
    t_ready = marks.t_ready
    t_stop = marks.t_stop
    terminals = [tr.t_terminal for tr in traces.values() if tr.t_terminal is not None]
    t_workload_end = max(terminals, default=t_ready)

    visits: dict[tuple[int, str, int], list[_TaskTrace]] = {}
    for tr in traces.values():
        if tr.slot is None:
            continue
        for unit in _slot_units(tr.slot):
            visits.setdefault(unit, []).append(tr)

    segments: list[tuple[str, float, float, float]] = []

    def add(cat: str, a: float, b: float, w: float) -> None:
        if b > a:
            segments.append((cat, a, b, w))

    n_units = 0.0
    for node in pool.agent_node_list:
        w = node.cores * 1.0 + node.gpus * gpu_weight
        n_units += w
        add(CAT_AGENT_NODES, 0.0, t_stop, w)

    for node in pool.worker_nodes:
        for res, count, w in (("c", node.cores, 1.0), ("g", node.gpus, gpu_weight)):
            for idx in range(count):
                n_units += w
                unit = (node.uid, res, idx)
                add(CAT_PILOT_STARTUP, 0.0, t_ready, w)
                used = visits.get(unit)
                if not used:
                    add(CAT_IDLE, t_ready, max(t_ready, t_workload_end), w)
                    add(CAT_PILOT_TERMINATION, max(t_ready, t_workload_end), t_stop, w)
                    continue
                used.sort(key=lambda tr: tr.t_sched)
                cursor = t_ready
                for tr in used:
                    add(CAT_WARMUP, cursor, tr.t_sched, w)
                    for cat, a, b in _task_segments(tr):
                        add(cat, a, b, w)
                    cursor = tr.t_unschedule if tr.t_unschedule is not None else tr.t_terminal
                drain_end = max(cursor, t_workload_end)
                add(CAT_DRAINING, cursor, drain_end, w)
                add(CAT_PILOT_TERMINATION, drain_end, t_stop, w)
    return segments, t_stop, n_units


def utilization(
    events: Iterable[Event], pool: ResourcePool, gpu_weight: float = 1.0
) -> UtilizationBreakdown:
    """Partition every unit's share of [pilot_start, pilot_stop].

    Each worker core and each GPU is one unit (GPU weight configurable);
    agent-node units count as AgentNodes for the whole window. Every
    resource-second is assigned to exactly one category, so percentages
    sum to 100 by construction.
    """
    events = list(events)
    segments, t_stop, n_units = _unit_weighted_segments(events, pool, gpu_weight)
    rs = {cat: 0.0 for cat in CATEGORIES}
    for cat, a, b, w in segments:
        rs[cat] += (b - a) * w
    total = sum(rs.values())
    if total <= 0:
        raise IncompleteRun("empty utilization window")
    percents = {cat: 100.0 * v / total for cat, v in rs.items()}
    return UtilizationBreakdown(
        resource_seconds=rs,
        percents=percents,
        total_resource_seconds=total,
        window_s=t_stop,
        n_units=n_units,
    )


# -- report files -------------------------------------------------------------


def write_overheads_csv(report: OverheadReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "union_s", "span_s", "mean_s", "stddev_s",
                    "min_s", "max_s", "n"])
        for name, st in report.components.items():
            w.writerow([name, f"{st.union_s:.6f}", f"{st.span_s:.6f}",
                        f"{st.mean_s:.6f}", f"{st.stddev_s:.6f}",
                        f"{st.min_s:.6f}", f"{st.max_s:.6f}", st.n])
        w.writerow(["joint_rp_launcher", f"{report.joint_union_s:.6f}", "", "",
                    "", "", "", ""])


def write_utilization_csv(ub: UtilizationBreakdown, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["category", "resource_seconds", "percent"])
        for cat in CATEGORIES:
            w.writerow([cat, f"{ub.resource_seconds[cat]:.6f}",
                        f"{ub.percents[cat]:.4f}"])


def write_summary_csv(metrics: dict[str, object], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in metrics.items():
            w.writerow([k, v])


def write_timeline_csv(
    events: Iterable[Event], pool: ResourcePool, path: str,
    buckets: int = 120, gpu_weight: float = 1.0,
) -> None:
    """Plot-ready long format: average units per category per time bucket."""
    events = list(events)
    segments, t_stop, _ = _unit_weighted_segments(events, pool, gpu_weight)
    if t_stop <= 0:
        raise IncompleteRun("empty utilization window")
    width = t_stop / buckets
    grid = {cat: np.zeros(buckets) for cat in CATEGORIES}
    for cat, a, b, w in segments:
        lo = int(a / width)
        hi = min(int(math.ceil(b / width)), buckets)
        for i in range(lo, hi):
            b_lo, b_hi = i * width, (i + 1) * width
            overlap = min(b, b_hi) - max(a, b_lo)
            if overlap > 0:
                grid[cat][i] += overlap * w / width
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "category", "units"])
        for i in range(buckets):
            t_mid = (i + 0.5) * width
            for cat in CATEGORIES:
                w.writerow([f"{t_mid:.6f}", cat, f"{grid[cat][i]:.4f}"])
