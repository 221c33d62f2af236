"""Domain types and the time base for the many-task pilot runtime.

A workload is an ordered list of task specs. Each task walks a fixed
lifecycle (New -> Scheduled -> Submitted -> Running -> Done, with Failed
and Canceled as terminal side exits) and accumulates one timestamp per
state, expressed in seconds since pilot start.

Time comes from a Clock: a VirtualClock driven purely by scheduled
events (deterministic, runs paper-scale workloads in desk wall-time) or
a RealClock backed by the monotonic OS clock for real process execution.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional


class TaskState(Enum):
    NEW = "New"
    SCHEDULED = "Scheduled"
    SUBMITTED = "Submitted"
    RUNNING = "Running"
    DONE = "Done"
    FAILED = "Failed"
    CANCELED = "Canceled"


# forward chain; Failed/Canceled are reachable from any non-terminal state
_CHAIN = [
    TaskState.NEW,
    TaskState.SCHEDULED,
    TaskState.SUBMITTED,
    TaskState.RUNNING,
    TaskState.DONE,
]
_CHAIN_INDEX = {s: i for i, s in enumerate(_CHAIN)}
TERMINAL_STATES = frozenset({TaskState.DONE, TaskState.FAILED, TaskState.CANCELED})


class FailureReason(Enum):
    FD_EXHAUSTED = "FdExhausted"
    RATE_REJECTED = "RateRejected"
    DVM_CRASHED = "DvmCrashed"
    NONZERO_EXIT = "NonzeroExit"


class IllegalTransition(ValueError):
    """Raised when a task is moved to a state the lifecycle does not allow."""


class TimeRegression(ValueError):
    """Raised when a timestamp would decrease along a task's history."""


@dataclass
class TaskSpec:
    """A unit of work: resource request plus either a simulated or a real payload.

    Simulated payloads carry `duration_s`; real payloads carry `executable`
    (+ args) and are launched as OS processes with stdio redirected to the
    three file slots.
    """

    uid: str
    cores: int = 1
    gpus: int = 0
    duration_s: Optional[float] = None
    executable: Optional[str] = None
    args: tuple[str, ...] = ()
    stdin_path: Optional[str] = None
    stdout_path: Optional[str] = None
    stderr_path: Optional[str] = None

    def __post_init__(self):
        if not self.uid:
            raise ValueError("task uid must be non-empty")
        if self.cores < 1:
            raise ValueError(f"task {self.uid}: cores must be >= 1, got {self.cores}")
        if self.gpus < 0:
            raise ValueError(f"task {self.uid}: gpus must be >= 0, got {self.gpus}")
        if self.executable is None:
            if self.duration_s is None or self.duration_s <= 0:
                raise ValueError(
                    f"task {self.uid}: simulated payload needs duration_s > 0"
                )

    @property
    def simulated(self) -> bool:
        return self.executable is None


@dataclass
class TaskRecord:
    """A task spec plus its lifecycle state, timestamps and placement."""

    spec: TaskSpec
    state: TaskState = TaskState.NEW
    timestamps: dict[TaskState, float] = field(default_factory=dict)
    slot: Optional["Slot"] = None  # bound placement, see scheduler module
    failure_reason: Optional[FailureReason] = None

    @classmethod
    def new(cls, spec: TaskSpec, t: float = 0.0) -> "TaskRecord":
        return cls(spec=spec, timestamps={TaskState.NEW: t})

    @property
    def uid(self) -> str:
        return self.spec.uid

    def t_of(self, state: TaskState) -> Optional[float]:
        return self.timestamps.get(state)


def advance_state(rec: TaskRecord, new_state: TaskState, t: float) -> TaskRecord:
    """Move `rec` to `new_state` at time `t`, recording the timestamp.

    Legal moves are one step along New<Scheduled<Submitted<Running<Done,
    or a jump to Failed/Canceled from any non-terminal state. `t` must
    not precede the last recorded timestamp.
    """
    if rec.state in TERMINAL_STATES:
        raise IllegalTransition(
            f"task {rec.uid}: no transitions out of terminal state {rec.state.value}"
        )
    if new_state in (TaskState.FAILED, TaskState.CANCELED):
        pass
    elif new_state in _CHAIN_INDEX:
        if _CHAIN_INDEX[new_state] != _CHAIN_INDEX[rec.state] + 1:
            raise IllegalTransition(
                f"task {rec.uid}: illegal transition "
                f"{rec.state.value} -> {new_state.value}"
            )
    else:  # pragma: no cover - enum is closed
        raise IllegalTransition(f"unknown state {new_state}")
    last_t = max(rec.timestamps.values(), default=0.0)
    if t < last_t:
        raise TimeRegression(
            f"task {rec.uid}: timestamp {t} precedes last recorded {last_t}"
        )
    rec.state = new_state
    rec.timestamps[new_state] = t
    return rec


@dataclass
class Workload:
    """An ordered batch of task specs, pulled by the agent in bundles."""

    tasks: list[TaskSpec]
    bundle_size: int = 1024

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("workload must contain at least one task")
        if self.bundle_size < 1:
            raise ValueError("bundle_size must be >= 1")
        seen = set()
        for spec in self.tasks:
            if spec.uid in seen:
                raise ValueError(f"duplicate task uid {spec.uid!r} in workload")
            seen.add(spec.uid)

    def __len__(self) -> int:
        return len(self.tasks)

    def bundles(self) -> list[list[TaskSpec]]:
        size = self.bundle_size
        return [self.tasks[i : i + size] for i in range(0, len(self.tasks), size)]


def make_workload(
    n: int,
    cores_per_task: int = 1,
    duration_s: float = 900.0,
    gpus_per_task: int = 0,
    bundle_size: int = 1024,
    prefix: str = "task",
) -> Workload:
    """Build a homogeneous workload of `n` simulated tasks with unique ids."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if cores_per_task < 1:
        raise ValueError(f"cores_per_task must be >= 1, got {cores_per_task}")
    if duration_s <= 0:
        raise ValueError(f"duration_s must be > 0, got {duration_s}")
    tasks = [
        TaskSpec(
            uid=f"{prefix}.{i:06d}",
            cores=cores_per_task,
            gpus=gpus_per_task,
            duration_s=duration_s,
        )
        for i in range(n)
    ]
    return Workload(tasks=tasks, bundle_size=bundle_size)


class ClockMode(Enum):
    REAL = "real"
    VIRTUAL = "virtual"


class Clock:
    """Event-driven time base shared by all runtime components.

    Callbacks are dispatched in timestamp order; ties break by insertion
    order, which makes virtual runs fully deterministic.
    """

    mode: ClockMode

    def __init__(self):
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()
        self._now = 0.0

    @property
    def now_s(self) -> float:
        return self._now

    def schedule_at(self, t: float, fn: Callable[[], None]) -> None:
        if t < self._now:
            t = self._now
        heapq.heappush(self._heap, (t, next(self._seq), fn))

    def schedule_in(self, dt: float, fn: Callable[[], None]) -> None:
        self.schedule_at(self.now_s + dt, fn)

    def pending(self) -> int:
        return len(self._heap)

    def run(self) -> None:
        raise NotImplementedError


class VirtualClock(Clock):
    """Min-heap virtual time: advances only through scheduled events."""

    mode = ClockMode.VIRTUAL

    def run(self) -> None:
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            self._now = t
            fn()


class RealClock(Clock):
    """Wall-clock time (monotonic), sleeping between scheduled events."""

    mode = ClockMode.REAL

    def __init__(self):
        super().__init__()
        self._t0 = time.monotonic()

    @property
    def now_s(self) -> float:
        return time.monotonic() - self._t0

    def schedule_at(self, t: float, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (t, next(self._seq), fn))

    def run(self) -> None:
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            delay = t - self.now_s
            if delay > 0:
                time.sleep(delay)
            fn()
