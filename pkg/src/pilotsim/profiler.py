"""Append-only profile log: timestamped lifecycle events from all components.

One event per line, UTF-8, comma separated:

    t_s,entity_kind,entity_id,component,name,attrs

`t_s` is fixed-point with microsecond precision; `attrs` is a
semicolon-separated list of key=value pairs. Reserved characters inside
fields are percent-encoded so arbitrary printable text round-trips.
Producers append in call order; readers sort by timestamp (stable, so
per-producer order survives for equal timestamps).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Optional
from urllib.parse import quote, unquote

# entity kinds
PILOT = "Pilot"
TASK = "Task"
DVM_JOB = "DvmJob"
EXECUTOR = "Executor"

# components
COMP_CLIENT = "Client"
COMP_AGENT = "Agent"
COMP_SCHEDULER = "Scheduler"
COMP_EXECUTOR = "Executor"
COMP_DVM = "Dvm"
COMP_PAYLOAD = "Payload"

# event names used by the runtime
EV_PILOT_START = "pilot_start"
EV_AGENT_READY = "agent_ready"
EV_WORKLOAD_RECEIVED = "workload_received"
EV_BUNDLE_RECEIVED = "bundle_received"
EV_SCHEDULE_OK = "schedule_ok"
EV_SUBMIT = "submit"
EV_RUNNING = "running"
EV_DONE = "done"
EV_TASK_FAIL = "task_fail"
EV_UNSCHEDULE = "unschedule"
EV_DVM_START = "dvm_start"
EV_DVM_CRASH = "dvm_crash"
EV_PILOT_STOP = "pilot_stop"

# PRRTE-style job stage events (entity kind DvmJob)
EV_INIT_COMPLETE = "init_complete"
EV_PENDING_APP_LAUNCH = "pending_app_launch"
EV_SENDING_LAUNCH_MSG = "sending_launch_msg"
EV_NOTIFY_COMPLETE = "notify_complete"

_FIELD_SAFE = " !\"#$&'()*+-./:<>?@[\\]^_`{|}~"  # excludes , ; = % and newlines


def _enc(text: str) -> str:
    return quote(text, safe=_FIELD_SAFE)


class SinkClosed(RuntimeError):
    """Raised when an event is recorded on a closed sink."""


class ProfileParseError(ValueError):
    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no
        self.reason = reason


@dataclass
class Event:
    t_s: float
    entity_kind: str
    entity_id: str
    component: str
    name: str
    attrs: dict[str, str] = field(default_factory=dict)

    def encode(self) -> str:
        attrs = ";".join(f"{_enc(k)}={_enc(v)}" for k, v in self.attrs.items())
        return (
            f"{self.t_s:.6f},{_enc(self.entity_kind)},{_enc(self.entity_id)},"
            f"{_enc(self.component)},{_enc(self.name)},{attrs}"
        )

    @classmethod
    def decode(cls, line: str) -> "Event":
        parts = line.split(",")
        if len(parts) != 6:
            raise ValueError(f"expected 6 fields, got {len(parts)}")
        t_s = float(parts[0])
        attrs: dict[str, str] = {}
        if parts[5]:
            for pair in parts[5].split(";"):
                if "=" not in pair:
                    raise ValueError(f"bad attr {pair!r}")
                k, v = pair.split("=", 1)
                attrs[unquote(k)] = unquote(v)
        return cls(
            t_s=t_s,
            entity_kind=unquote(parts[1]),
            entity_id=unquote(parts[2]),
            component=unquote(parts[3]),
            name=unquote(parts[4]),
            attrs=attrs,
        )


class EventSink:
    """Buffered event writer; optionally also keeps events in memory.

    Writes are flushed explicitly at pilot termination. A crash-truncated
    log is detectable by the missing pilot_stop sentinel.
    """

    def __init__(self, path: Optional[str] = None, keep: bool = True):
        self.path = path
        self._fh: Optional[io.TextIOWrapper] = None
        if path is not None:
            self._fh = open(path, "w", encoding="utf-8")
        self._keep = keep
        self.events: list[Event] = []
        self._closed = False

    def record(self, event: Event) -> None:
        if self._closed:
            raise SinkClosed("event sink is closed")
        if self._fh is not None:
            self._fh.write(event.encode())
            self._fh.write("\n")
        if self._keep:
            self.events.append(event)

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.flush()

    def close(self) -> None:
        if self._closed:
            return
        if self._fh is not None:
            self._fh.flush()
            self._fh.close()
        self._closed = True


def record(sink: EventSink, event: Event) -> None:
    sink.record(event)


def load_profile(path: str) -> list[Event]:
    """Parse a profile log; returns events sorted by timestamp (stable)."""
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                events.append(Event.decode(line))
            except ValueError as exc:
                raise ProfileParseError(path, line_no, str(exc)) from exc
    events.sort(key=lambda e: e.t_s)
    return events


def sort_events(events: Iterable[Event]) -> list[Event]:
    return sorted(events, key=lambda e: e.t_s)


def write_run_metadata(path: str, meta: dict[str, str]) -> None:
    """Write the run-metadata header file (config echo, seed, clock mode)."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={v}\n")


def read_run_metadata(path: str) -> dict[str, str]:
    meta: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad metadata line {line!r} in {path}")
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    return meta
