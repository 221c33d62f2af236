"""The agent: one pilot run wiring scheduler, executors and backends.

The run is a single logical control loop driven by the clock's event
queue. t=0 is pilot start; the agent becomes ready after its startup
cost, pulls the workload in bundles, schedules tasks serially onto the
pool (first-fit), and feeds them round-robin to the executors, which
pace submissions and drains against the backend. When every task is
terminal the agent tears down and records the pilot_stop sentinel.
"""

from __future__ import annotations

import os
import tempfile
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ConfigError, ExperimentConfig
from .core import (
    Clock,
    FailureReason,
    RealClock,
    TaskRecord,
    TaskState,
    VirtualClock,
    advance_state,
    make_workload,
)
from .dvm import DvmConfig, DvmTopology, LatencySpec, dvm_start
from .launcher import (
    BackendKind,
    Completion,
    Executor,
    FdAccountant,
    LaunchBackendProfile,
    LocalExecBackend,
    SimJsmBackend,
    SubAgentSet,
    make_partitions,
)
from .profiler import (
    COMP_AGENT,
    COMP_CLIENT,
    COMP_EXECUTOR,
    COMP_PAYLOAD,
    COMP_SCHEDULER,
    EV_AGENT_READY,
    EV_BUNDLE_RECEIVED,
    EV_DONE,
    EV_PILOT_START,
    EV_PILOT_STOP,
    EV_RUNNING,
    EV_SCHEDULE_OK,
    EV_SUBMIT,
    EV_TASK_FAIL,
    EV_UNSCHEDULE,
    EV_WORKLOAD_RECEIVED,
    PILOT,
    TASK,
    Event,
    EventSink,
)
from .scheduler import ResourcePool


@dataclass
class _Partition:
    pool: ResourcePool
    backend: object = None
    executors: list[Executor] = field(default_factory=list)
    waitpool: list[TaskRecord] = field(default_factory=list)
    rr: int = 0


@dataclass
class RunResult:
    records: dict[str, TaskRecord]
    events: list[Event]
    pool: ResourcePool
    n_done: int
    n_failed: int
    failures: dict[str, int]
    seed: int
    executors: list[Executor]
    run_dir: Optional[str] = None

    @property
    def n_tasks(self) -> int:
        return len(self.records)


class PilotRun:
    """Executes one repetition of an experiment configuration."""

    def __init__(
        self,
        cfg: ExperimentConfig,
        run_dir: Optional[str] = None,
        seed: Optional[int] = None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.run_dir = run_dir
        self.seed = cfg.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.clock: Clock = RealClock() if cfg.clock == "real" else VirtualClock()
        log_path = os.path.join(run_dir, "profile.log") if run_dir else None
        if run_dir:
            os.makedirs(run_dir, exist_ok=True)
        self.sink = EventSink(log_path, keep=True)

        self.pool = ResourcePool.uniform(
            cfg.effective_nodes(),
            cores_per_node=cfg.pool.cores_per_node,
            gpus_per_node=cfg.pool.gpus_per_node,
            agent_nodes=cfg.pool.agent_nodes,
        )
        self.profile = LaunchBackendProfile(
            kind=BackendKind(cfg.backend.kind),
            submit_delay_s=cfg.backend.submit_delay_s,
            submit_cost_s=cfg.backend.submit_cost_s,
            max_rate_hz=cfg.backend.max_rate_hz,
            fail_prob_over_rate=cfg.backend.fail_prob_over_rate,
            fd_limit=cfg.backend.fd_limit,
            fd_reserved=cfg.backend.fd_reserved,
            fd_per_task=cfg.backend.fd_per_task,
        )
        self.fd = FdAccountant(self.profile.fd_limit, self.profile.fd_reserved)
        self.workload = make_workload(
            cfg.workload.n_tasks,
            cores_per_task=cfg.workload.cores_per_task,
            duration_s=cfg.workload.duration_s,
            gpus_per_task=cfg.workload.gpus_per_task,
            bundle_size=cfg.workload.bundle_size,
        )
        self.sub_agents = SubAgentSet(
            n_sub_agents=cfg.subagents.n_sub_agents,
            executors_per_sub_agent=cfg.subagents.executors_per_sub_agent,
        )
        if self.sub_agents.n_executors < cfg.agent.partitions:
            raise ConfigError("need at least one executor per partition")
        self.groups = [
            _Partition(pool=p) for p in make_partitions(self.pool, cfg.agent.partitions)
        ]

        self.records: dict[str, TaskRecord] = {}
        self._rec_group: dict[str, _Partition] = {}
        self._pending: deque[TaskRecord] = deque()
        self._sched_busy = False
        self._fd_held: set[str] = set()
        self._freed: set[str] = set()
        self._terminal = 0
        self._stopping = False
        self.n_done = 0
        self.n_failed = 0
        self.failures: dict[str, int] = {}
        self.executors: list[Executor] = []
        self.dvm_handles: list = []
        self._t_ready: Optional[float] = None

    # -- lifecycle -----------------------------------------------------------

    def run(self) -> RunResult:
        self.clock.schedule_at(0.0, self._pilot_start)
        self.clock.run()
        self.sink.flush()
        self.sink.close()
        return RunResult(
            records=self.records,
            events=self.sink.events,
            pool=self.pool,
            n_done=self.n_done,
            n_failed=self.n_failed,
            failures=dict(self.failures),
            seed=self.seed,
            executors=self.executors,
            run_dir=self.run_dir,
        )

    def _pilot_start(self) -> None:
        cfg = self.cfg
        self._event(0.0, PILOT, "pilot", COMP_AGENT, EV_PILOT_START, {
            "nodes": str(cfg.pool.nodes),
            "agent_nodes": str(cfg.pool.agent_nodes),
            "clock": cfg.clock,
            "seed": str(self.seed),
        })
        self._build_backends()
        self._build_executors()
        self.clock.schedule_in(cfg.agent.startup_s, self._agent_ready)

    def _build_backends(self) -> None:
        cfg = self.cfg
        kind = self.profile.kind
        for i, group in enumerate(self.groups):
            if kind is BackendKind.SIM_DVM:
                dcfg = DvmConfig(
                    topology=DvmTopology(cfg.dvm.topology),
                    capacity_tasks=cfg.dvm.capacity_tasks,
                    setup=LatencySpec(cfg.dvm.setup_mean_s, cfg.dvm.setup_std_s),
                    launch_msg=LatencySpec(cfg.dvm.launch_mean_s, cfg.dvm.launch_std_s),
                    notify=LatencySpec(cfg.dvm.notify_mean_s, cfg.dvm.notify_std_s),
                )
                group.backend = dvm_start(
                    dcfg, group.pool, self.clock, self.rng,
                    sink=self.sink, host=self, uid=f"dvm.{i}",
                )
                self.dvm_handles.append(group.backend)
            elif kind is BackendKind.SIM_JSM:
                group.backend = SimJsmBackend(
                    self.clock, self,
                    LatencySpec(cfg.dvm.launch_mean_s, cfg.dvm.launch_std_s),
                    self.rng,
                )
            else:
                stdio_dir = (
                    os.path.join(self.run_dir, "tasks")
                    if self.run_dir
                    else tempfile.mkdtemp(prefix="pilotsim-stdio-")
                )
                group.backend = LocalExecBackend(
                    self.clock, self, stdio_dir,
                    poll_interval_s=cfg.agent.poll_interval_s,
                )

    def _build_executors(self) -> None:
        k = len(self.groups)
        for j in range(self.sub_agents.n_executors):
            group = self.groups[j % k]
            ex = Executor(
                uid=f"exec.{j:03d}",
                profile=self.profile,
                clock=self.clock,
                fd=self.fd,
                backend=group.backend,
                host=self,
                rng=self.rng,
            )
            group.executors.append(ex)
            self.executors.append(ex)

    def _agent_ready(self) -> None:
        now = self.clock.now_s
        self._t_ready = now
        self._event(now, PILOT, "pilot", COMP_AGENT, EV_AGENT_READY)
        self._event(now, PILOT, "pilot", COMP_CLIENT, EV_WORKLOAD_RECEIVED,
                    {"n_tasks": str(len(self.workload))})
        k = len(self.groups)
        idx = 0
        for b, bundle in enumerate(self.workload.bundles()):
            self._event(now, PILOT, f"bundle.{b:04d}", COMP_CLIENT,
                        EV_BUNDLE_RECEIVED, {"size": str(len(bundle))})
            for spec in bundle:
                rec = TaskRecord.new(spec, t=now)
                self.records[spec.uid] = rec
                self._rec_group[spec.uid] = self.groups[idx % k]
                self._pending.append(rec)
                idx += 1
        self._kick_sched()

    # -- scheduling lane -----------------------------------------------------

    def _kick_sched(self) -> None:
        if self._sched_busy or not self._pending:
            return
        self._sched_busy = True
        rec = self._pending.popleft()
        self.clock.schedule_in(
            self.cfg.agent.schedule_cost_s, lambda: self._sched_complete(rec)
        )

    def _sched_complete(self, rec: TaskRecord) -> None:
        self._sched_busy = False
        group = self._rec_group[rec.uid]
        slot = group.pool.try_schedule(rec.spec)
        if slot is None:
            group.waitpool.append(rec)
        else:
            now = self.clock.now_s
            rec.slot = slot
            advance_state(rec, TaskState.SCHEDULED, now)
            self._event(now, TASK, rec.uid, COMP_SCHEDULER, EV_SCHEDULE_OK,
                        {"slot": slot.encode(), "cores": str(rec.spec.cores)})
            ex = group.executors[group.rr % len(group.executors)]
            group.rr += 1
            ex.enqueue(rec, slot)
        self._kick_sched()

    # -- executor host hooks ---------------------------------------------------

    def fd_acquired(self, rec: TaskRecord) -> None:
        self._fd_held.add(rec.uid)

    def task_submitted(self, rec: TaskRecord, executor: Executor,
                       waited: float, now: float) -> None:
        advance_state(rec, TaskState.SUBMITTED, now)
        self._event(now, TASK, rec.uid, COMP_EXECUTOR, EV_SUBMIT,
                    {"wait": f"{waited:.6f}", "executor": executor.uid})

    def task_running(self, rec: TaskRecord, t: float) -> None:
        advance_state(rec, TaskState.RUNNING, t)
        self._event(t, TASK, rec.uid, COMP_PAYLOAD, EV_RUNNING)

    def task_collected(self, comp: Completion, now: float) -> None:
        rec = self.records[comp.task_uid]
        if rec.state in (TaskState.DONE, TaskState.FAILED, TaskState.CANCELED):
            return
        if comp.exit_status == 0:
            advance_state(rec, TaskState.DONE, comp.t_end)
            self._event(comp.t_end, TASK, rec.uid, COMP_PAYLOAD, EV_DONE,
                        {"exit": "0"})
            self.n_done += 1
        else:
            rec.failure_reason = FailureReason.NONZERO_EXIT
            advance_state(rec, TaskState.FAILED, comp.t_end)
            self._count_failure(FailureReason.NONZERO_EXIT)
            self._event(comp.t_end, TASK, rec.uid, COMP_PAYLOAD, EV_TASK_FAIL,
                        {"reason": FailureReason.NONZERO_EXIT.value,
                         "exit": str(comp.exit_status)})
        self._release(rec, now)
        self._after_terminal()

    def task_failed(self, rec: TaskRecord, reason: FailureReason, now: float) -> None:
        if rec.state in (TaskState.DONE, TaskState.FAILED, TaskState.CANCELED):
            return
        rec.failure_reason = reason
        advance_state(rec, TaskState.FAILED, now)
        self._count_failure(reason)
        self._event(now, TASK, rec.uid, COMP_EXECUTOR, EV_TASK_FAIL,
                    {"reason": reason.value})
        self._release(rec, now)
        self._after_terminal()

    # -- internals -------------------------------------------------------------

    def _count_failure(self, reason: FailureReason) -> None:
        self.n_failed += 1
        self.failures[reason.value] = self.failures.get(reason.value, 0) + 1

    def _release(self, rec: TaskRecord, now: float) -> None:
        if rec.uid in self._fd_held:
            self.fd.release(self.profile.fd_per_task)
            self._fd_held.discard(rec.uid)
        group = self._rec_group[rec.uid]
        if rec.slot is not None and rec.uid not in self._freed:
            group.pool.unschedule(rec.slot)
            self._freed.add(rec.uid)
            self._event(now, TASK, rec.uid, COMP_SCHEDULER, EV_UNSCHEDULE)
        if group.waitpool:
            self._pending.extendleft(reversed(group.waitpool))
            group.waitpool.clear()
            self._kick_sched()

    def _after_terminal(self) -> None:
        self._terminal += 1
        if self._terminal == len(self.workload) and not self._stopping:
            self._stopping = True
            self.clock.schedule_in(self.cfg.agent.termination_s, self._pilot_stop)

    def _pilot_stop(self) -> None:
        now = self.clock.now_s
        self._event(now, PILOT, "pilot", COMP_AGENT, EV_PILOT_STOP, {
            "n_done": str(self.n_done),
            "n_failed": str(self.n_failed),
        })
        self.sink.flush()

    def _event(self, t, kind, uid, comp, name, attrs=None) -> None:
        self.sink.record(Event(t, kind, uid, comp, name, attrs or {}))


def run_pilot(cfg: ExperimentConfig, run_dir: Optional[str] = None,
              seed: Optional[int] = None) -> RunResult:
    return PilotRun(cfg, run_dir=run_dir, seed=seed).run()
