"""Executor-side launch pipeline: rate gating, FD accounting, backends.

Each executor is a sequential worker with two serialized lanes:

* a submit lane - waits the configured inter-submission delay, charges
  file descriptors, applies over-rate failure injection, then hands the
  task to the launch backend (the submission handshake itself costs
  `submit_cost_s` of lane time);
* a drain lane - collects finished payloads one at a time under the same
  pacing, so the drain rate mirrors the submit rate.

Backends are pluggable: the simulated DVM (dvm module), a simulated JSM
profile, and a real local-process backend that spawns OS processes with
stdio redirected to files (three real descriptors per task).
"""

from __future__ import annotations

import os
import subprocess
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .core import Clock, FailureReason, TaskRecord
from .scheduler import ResourcePool, Slot


class BackendKind(Enum):
    LOCAL_EXEC = "local_exec"
    SIM_DVM = "sim_dvm"
    SIM_JSM = "sim_jsm"


JSM_FD_LIMIT = 4096  # open-files ceiling that cannot be raised under JSM


@dataclass
class LaunchBackendProfile:
    """Submission behavior of a launch backend as seen by executors."""

    kind: BackendKind = BackendKind.SIM_DVM
    submit_delay_s: float = 0.1
    submit_cost_s: float = 0.04
    max_rate_hz: Optional[float] = 10.0
    fail_prob_over_rate: float = 0.05
    fd_limit: int = 4096
    fd_reserved: int = 1195
    fd_per_task: int = 3

    def __post_init__(self):
        if self.submit_delay_s < 0:
            raise ValueError("submit_delay_s must be >= 0")
        if self.submit_cost_s < 0:
            raise ValueError("submit_cost_s must be >= 0")
        if not 0.0 <= self.fail_prob_over_rate <= 1.0:
            raise ValueError("fail_prob_over_rate must be in [0, 1]")
        if self.fd_per_task < 1:
            raise ValueError("fd_per_task must be >= 1")
        if self.fd_reserved >= self.fd_limit:
            raise ValueError("fd_reserved must be < fd_limit")
        if self.kind is BackendKind.SIM_JSM and self.fd_limit != JSM_FD_LIMIT:
            raise ValueError(
                f"the JSM open-files limit is fixed at {JSM_FD_LIMIT} and "
                "cannot be reconfigured"
            )

    @classmethod
    def sim_dvm(cls, **kw) -> "LaunchBackendProfile":
        return cls(kind=BackendKind.SIM_DVM, **kw)

    @classmethod
    def sim_jsm(cls, **kw) -> "LaunchBackendProfile":
        kw.setdefault("submit_delay_s", 0.0)  # sequential JSM needs no delay
        kw.setdefault("max_rate_hz", None)
        return cls(kind=BackendKind.SIM_JSM, **kw)

    @classmethod
    def local_exec(cls, **kw) -> "LaunchBackendProfile":
        kw.setdefault("submit_delay_s", 0.0)
        kw.setdefault("submit_cost_s", 0.0)
        kw.setdefault("max_rate_hz", None)
        return cls(kind=BackendKind.LOCAL_EXEC, **kw)


class FdAccountant:
    """Shared counter of file descriptors consumed by launched tasks.

    `reserved` descriptors model the runtime's own files and are never
    handed to tasks; reserved <= in_use + reserved <= limit always holds.
    """

    def __init__(self, limit: int, reserved: int = 0):
        if reserved >= limit:
            raise ValueError("reserved must be < limit")
        self.limit = limit
        self.reserved = reserved
        self.in_use = 0

    @property
    def available(self) -> int:
        return self.limit - self.reserved - self.in_use

    def acquire(self, n: int) -> bool:
        if n < 1:
            raise ValueError("n must be >= 1")
        if self.in_use + self.reserved + n > self.limit:
            return False
        self.in_use += n
        return True

    def release(self, n: int) -> None:
        if n > self.in_use:
            raise ValueError(f"releasing {n} descriptors but only {self.in_use} in use")
        self.in_use -= n


def fd_acquire(acct: FdAccountant, n: int) -> bool:
    """Charge `n` descriptors; False (state unchanged) when exhausted."""
    return acct.acquire(n)


@dataclass
class RateLimiter:
    """Enforces a minimum delay between consecutive lane operations.

    The delay is measured from the end of the previous operation, which
    models an artificial sleep inserted before every submission; gaps
    between recorded submissions therefore never fall below the delay.
    """

    last_op_end: Optional[float] = None

    def mark_op_end(self, t: float) -> None:
        self.last_op_end = t


def rate_gate(state: RateLimiter, now_s: float, delay_s: float) -> float:
    """Wait needed so consecutive submissions stay >= delay_s apart."""
    if delay_s < 0:
        raise ValueError("delay_s must be >= 0")
    if state.last_op_end is None:
        return delay_s
    return max(0.0, state.last_op_end + delay_s - now_s)


@dataclass
class SubAgentSet:
    """Parallel executor groups inside the agent."""

    n_sub_agents: int = 1
    executors_per_sub_agent: int = 1

    def __post_init__(self):
        if self.n_sub_agents < 1:
            raise ValueError("n_sub_agents must be >= 1")
        if self.executors_per_sub_agent < 1:
            raise ValueError("executors_per_sub_agent must be >= 1")

    @property
    def n_executors(self) -> int:
        return self.n_sub_agents * self.executors_per_sub_agent


@dataclass(frozen=True)
class Completion:
    """A finished payload as reported by a backend to its executor."""

    task_uid: str
    exit_status: int
    t_end: float


class Executor:
    """One sequential launch worker: paced submit lane plus drain lane.

    The host object wires the executor into the agent: it owns task
    state transitions, event recording, slot release and FD bookkeeping.
    """

    def __init__(
        self,
        uid: str,
        profile: LaunchBackendProfile,
        clock: Clock,
        fd: FdAccountant,
        backend,
        host,
        rng: np.random.Generator,
    ):
        self.uid = uid
        self.profile = profile
        self.clock = clock
        self.fd = fd
        self.backend = backend
        self.host = host
        self.rng = rng
        self.submit_gate = RateLimiter()
        self.drain_gate = RateLimiter()
        self._submit_q: deque[tuple[TaskRecord, Slot]] = deque()
        self._drain_q: deque[Completion] = deque()
        self._submit_busy = False
        self._drain_busy = False
        self._last_submit_t: Optional[float] = None
        self.submitted_ts: list[float] = []
        self.enforced_waits: list[float] = []
        self.collected: list[Completion] = []

    # -- submit lane ---------------------------------------------------------

    def enqueue(self, rec: TaskRecord, slot: Slot) -> None:
        self._submit_q.append((rec, slot))
        self._kick_submit()

    def _kick_submit(self) -> None:
        if self._submit_busy or not self._submit_q:
            return
        self._submit_busy = True
        wait = rate_gate(self.submit_gate, self.clock.now_s, self.profile.submit_delay_s)
        self.clock.schedule_in(wait, lambda: self._do_submit(wait))

    def _do_submit(self, waited: float) -> None:
        rec, slot = self._submit_q.popleft()
        now = self.clock.now_s
        if not self.fd.acquire(self.profile.fd_per_task):
            self.host.task_failed(rec, FailureReason.FD_EXHAUSTED, now)
            self._end_submit_op(now)
            return
        self.host.fd_acquired(rec)
        if self._over_rate(now) and self.rng.random() < self.profile.fail_prob_over_rate:
            self.host.task_failed(rec, FailureReason.RATE_REJECTED, now)
            self._end_submit_op(now)
            return
        self._last_submit_t = now
        self.submitted_ts.append(now)
        self.enforced_waits.append(waited)
        self.host.task_submitted(rec, self, waited, now)
        self.clock.schedule_in(
            self.profile.submit_cost_s, lambda: self._dispatch(rec, slot)
        )

    def _over_rate(self, now: float) -> bool:
        if self.profile.max_rate_hz is None or self._last_submit_t is None:
            return False
        gap = now - self._last_submit_t
        return gap * self.profile.max_rate_hz < 1.0

    def _dispatch(self, rec: TaskRecord, slot: Slot) -> None:
        now = self.clock.now_s
        accepted = self.backend.submit_job(rec, slot, self, now)
        if not accepted:
            self.host.task_failed(rec, FailureReason.DVM_CRASHED, now)
        self._end_submit_op(now)

    def _end_submit_op(self, now: float) -> None:
        self.submit_gate.mark_op_end(now)
        self._submit_busy = False
        self._kick_submit()

    # -- drain lane ----------------------------------------------------------

    def enqueue_completion(self, comp: Completion) -> None:
        self._drain_q.append(comp)
        self._kick_drain()

    def _kick_drain(self) -> None:
        if self._drain_busy or not self._drain_q:
            return
        self._drain_busy = True
        wait = rate_gate(self.drain_gate, self.clock.now_s, self.profile.submit_delay_s)
        self.clock.schedule_in(wait, self._do_collect)

    def _do_collect(self) -> None:
        comp = self._drain_q.popleft()
        self.collected.append(comp)
        self.host.task_collected(comp, self.clock.now_s)
        self.clock.schedule_in(self.profile.submit_cost_s, self._end_drain_op)

    def _end_drain_op(self) -> None:
        self.drain_gate.mark_op_end(self.clock.now_s)
        self._drain_busy = False
        self._kick_drain()


def submit(backend, executor: Executor, rec: TaskRecord, slot: Slot) -> None:
    """Feed one scheduled task into an executor's submit lane."""
    assert executor.backend is backend
    executor.enqueue(rec, slot)


def collect_completion(backend) -> list[Completion]:
    """Completions finished since the last poll, in end-time order."""
    return backend.collect_completions()


class LocalExecBackend:
    """Spawns real OS processes with stdio redirected to files.

    Simulated payloads are enacted with `sleep <duration>`; real payloads
    run their executable directly. The three stdio descriptors per task
    are real open files here.
    """

    def __init__(self, clock: Clock, host, stdio_dir: str, poll_interval_s: float = 0.02):
        self.clock = clock
        self.host = host
        self.stdio_dir = stdio_dir
        self.poll_interval_s = poll_interval_s
        self._procs: dict[str, tuple[subprocess.Popen, list, object]] = {}
        self._completed: list[Completion] = []
        self._poller_on = False
        os.makedirs(stdio_dir, exist_ok=True)

    def submit_job(self, rec: TaskRecord, slot: Slot, executor, now: float) -> bool:
        spec = rec.spec
        if spec.executable is not None:
            argv = [spec.executable, *spec.args]
        else:
            argv = ["sleep", str(spec.duration_s)]
        paths = self._stdio_paths(rec)
        if not os.path.exists(paths[0]):
            open(paths[0], "w").close()
        files = [open(paths[0], "rb"), open(paths[1], "wb"), open(paths[2], "wb")]
        try:
            proc = subprocess.Popen(
                argv, stdin=files[0], stdout=files[1], stderr=files[2]
            )
        except OSError:
            for fh in files:
                fh.close()
            self.host.task_failed(rec, FailureReason.NONZERO_EXIT, self.clock.now_s)
            return True
        self._procs[rec.uid] = (proc, files, executor)
        self.host.task_running(rec, self.clock.now_s)
        self._ensure_poller()
        return True

    def _stdio_paths(self, rec: TaskRecord) -> tuple[str, str, str]:
        spec = rec.spec
        base = os.path.join(self.stdio_dir, rec.uid)
        return (
            spec.stdin_path or f"{base}.in",
            spec.stdout_path or f"{base}.out",
            spec.stderr_path or f"{base}.err",
        )

    def _ensure_poller(self) -> None:
        if not self._poller_on:
            self._poller_on = True
            self.clock.schedule_in(self.poll_interval_s, self._poll)

    def _poll(self) -> None:
        now = self.clock.now_s
        finished = [uid for uid, (p, _, _) in self._procs.items() if p.poll() is not None]
        for uid in finished:
            proc, files, executor = self._procs.pop(uid)
            for fh in files:
                fh.close()
            comp = Completion(task_uid=uid, exit_status=proc.returncode, t_end=now)
            self._completed.append(comp)
            executor.enqueue_completion(comp)
        if self._procs:
            self.clock.schedule_in(self.poll_interval_s, self._poll)
        else:
            self._poller_on = False

    def collect_completions(self) -> list[Completion]:
        out = sorted(self._completed, key=lambda c: c.t_end)
        self._completed = []
        return out


class SimJsmBackend:
    """JSM modeled as a backend latency/limit profile, not a protocol.

    Same pipeline as the DVM backend but without a persistent overlay:
    one launch-latency sample, then the payload runs. JSM destabilizes
    under concurrent executors: the backend fails permanently the moment
    a second executor submits through it.
    """

    def __init__(self, clock: Clock, host, latency, rng: np.random.Generator):
        self.clock = clock
        self.host = host
        self.latency = latency  # duck-typed: .sample(rng) -> seconds
        self.rng = rng
        self.unstable = False
        self._seen_executors: set[str] = set()
        self._live: dict[str, tuple[TaskRecord, object]] = {}
        self._completed: list[Completion] = []

    def submit_job(self, rec: TaskRecord, slot: Slot, executor, now: float) -> bool:
        if self.unstable:
            return False
        self._seen_executors.add(executor.uid)
        if len(self._seen_executors) > 1:
            self._destabilize(now)
            return False
        self._live[rec.uid] = (rec, executor)
        delay = self.latency.sample(self.rng)
        self.clock.schedule_in(delay, lambda: self._to_running(rec.uid))
        return True

    def _destabilize(self, now: float) -> None:
        self.unstable = True
        live = list(self._live.values())
        self._live.clear()
        for rec, _ in live:
            self.host.task_failed(rec, FailureReason.DVM_CRASHED, now)

    def _to_running(self, uid: str) -> None:
        if self.unstable or uid not in self._live:
            return
        rec, _ = self._live[uid]
        now = self.clock.now_s
        self.host.task_running(rec, now)
        self.clock.schedule_in(
            rec.spec.duration_s or 0.0, lambda: self._payload_end(uid)
        )

    def _payload_end(self, uid: str) -> None:
        if self.unstable or uid not in self._live:
            return
        rec, executor = self._live.pop(uid)
        comp = Completion(task_uid=uid, exit_status=0, t_end=self.clock.now_s)
        self._completed.append(comp)
        executor.enqueue_completion(comp)

    def collect_completions(self) -> list[Completion]:
        out = sorted(self._completed, key=lambda c: c.t_end)
        self._completed = []
        return out


def make_partitions(pool: ResourcePool, k: int) -> list[ResourcePool]:
    """Split worker nodes into k contiguous disjoint pools.

    Partition pools carry no agent nodes of their own; the caller pairs
    each partition with its own backend instance and meta-schedules
    tasks round-robin across partitions.
    """
    workers = pool.worker_nodes
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(workers):
        raise ValueError(f"k ({k}) exceeds worker node count ({len(workers)})")
    if k == 1:
        return [pool]
    base, extra = divmod(len(workers), k)
    parts = []
    lo = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        parts.append(ResourcePool(workers[lo : lo + size], agent_nodes=0))
        lo += size
    return parts
