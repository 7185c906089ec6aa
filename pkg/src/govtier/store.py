"""Durable state: checkpoint store, append-only event log, and audit replay.

Two backends share one contract: MemoryStorage for tests and simulation,
FileStorage for anything that must survive a process kill. FileStorage keeps a
single key-value snapshot file plus one JSON Lines event file per task; every
mutation is flushed (write-temp, rename, fsync) before the call returns.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional

from .model import Checkpoint, RoleName, Task, check_fields

EVENT_NAMES = frozenset({
    "runner.tier.selected",
    "agent.critic.reviewed",
    "agent.verifier.checked",
    "runner.phase.changed",
    "runner.completed",
    "runner.failed",
    "gateway.intent.executed",
    "gateway.approval.created",
    "gateway.approval.decided",
    "runner.override.recorded",
    "agent.recovery.decided",
    "agent.retrospector.reported",
})


class VersionConflict(Exception):
    """Compare-and-set write lost to a concurrent writer."""


class StateConflict(Exception):
    """Record exists but is not in the state the mutation requires."""


class ReplayDivergence(Exception):
    """Event-log fold disagrees with the stored checkpoint."""


@dataclass(frozen=True, slots=True)
class Event:
    """One immutable audit record; seq is gapless per task."""

    seq: int
    task_id: str
    name: str
    payload: dict[str, Any]
    timestamp: float

    def __post_init__(self) -> None:
        if self.name not in EVENT_NAMES:
            raise ValueError(f"Event: unknown name {self.name!r}")
        if self.seq < 1:
            raise ValueError("Event: seq starts at 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "task_id": self.task_id,
            "name": self.name,
            "payload": self.payload,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "Event":
        check_fields(record, "Event", ["seq", "task_id", "name", "payload", "timestamp"])
        return cls(
            seq=int(record["seq"]),
            task_id=str(record["task_id"]),
            name=str(record["name"]),
            payload=dict(record["payload"]),
            timestamp=float(record["timestamp"]),
        )


class MemoryStorage:
    """In-process storage; the base class for the file-backed variant."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._tasks: dict[str, dict[str, Any]] = {}
        self._checkpoints: dict[str, dict[str, Any]] = {}
        self._events: dict[str, list[Event]] = {}
        self._feed: list[tuple[str, int]] = []
        self._tickets: dict[str, dict[str, Any]] = {}
        self._idempotency: dict[str, dict[str, Any]] = {}
        self._objects: dict[str, dict[str, Any]] = {}
        self._leases: dict[str, dict[str, Any]] = {}
        self._scenarios: dict[str, dict[str, Any]] = {}

    # -- tasks ---------------------------------------------------------------

    def put_task(self, task: Task) -> None:
        with self._lock:
            self._tasks[task.id] = task.to_dict()
            self._flush()

    def get_task(self, task_id: str) -> Optional[Task]:
        with self._lock:
            record = self._tasks.get(task_id)
            return Task.from_dict(record) if record else None

    def list_task_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._tasks)

    # -- scenarios (scripted role behavior attached to a task) ----------------

    def put_scenario(self, task_id: str, scenario: dict[str, Any]) -> None:
        with self._lock:
            self._scenarios[task_id] = scenario
            self._flush()

    def get_scenario(self, task_id: str) -> Optional[dict[str, Any]]:
        with self._lock:
            return self._scenarios.get(task_id)

    # -- checkpoints ----------------------------------------------------------

    def persist_checkpoint(self, cp: Checkpoint) -> int:
        """Compare-and-set write: cp.version must be exactly stored version + 1."""
        with self._lock:
            stored = self._checkpoints.get(cp.task_id)
            expected = (stored["version"] + 1) if stored else 1
            if cp.version != expected:
                raise VersionConflict(
                    f"checkpoint {cp.task_id}: wrote version {cp.version}, expected {expected}")
            self._checkpoints[cp.task_id] = cp.to_dict()
            self._flush()
            return cp.version

    def load_checkpoint(self, task_id: str) -> Optional[Checkpoint]:
        with self._lock:
            record = self._checkpoints.get(task_id)
            return Checkpoint.from_dict(record) if record else None

    # -- events ----------------------------------------------------------------

    def append_event(self, task_id: str, name: str, payload: dict[str, Any],
                     timestamp: float) -> Event:
        with self._lock:
            log = self._events.setdefault(task_id, [])
            event = Event(seq=len(log) + 1, task_id=task_id, name=name,
                          payload=payload, timestamp=timestamp)
            log.append(event)
            self._feed.append((task_id, event.seq))
            self._append_event_durable(event)
            return event

    def events(self, task_id: str) -> list[Event]:
        with self._lock:
            return list(self._events.get(task_id, ()))

    def feed(self, after: int = 0, limit: int = 500) -> tuple[int, list[Event]]:
        """Global arrival-ordered event feed; `after` is an opaque cursor."""
        with self._lock:
            window = self._feed[after:after + limit]
            out = [self._events[tid][seq - 1] for tid, seq in window]
            return after + len(window), out

    # -- approval tickets -------------------------------------------------------

    def put_ticket(self, ticket: dict[str, Any]) -> None:
        with self._lock:
            self._tickets[ticket["id"]] = ticket
            self._flush()

    def get_ticket(self, ticket_id: str) -> Optional[dict[str, Any]]:
        with self._lock:
            record = self._tickets.get(ticket_id)
            return dict(record) if record else None

    def list_tickets(self, state: Optional[str] = None) -> list[dict[str, Any]]:
        with self._lock:
            rows = [dict(t) for t in self._tickets.values()
                    if state is None or t["state"] == state]
            return sorted(rows, key=lambda t: t["id"])

    def list_tickets_for(self, task_id: str) -> list[dict[str, Any]]:
        with self._lock:
            rows = [dict(t) for t in self._tickets.values() if t["task_id"] == task_id]
            return sorted(rows, key=lambda t: t["id"])

    def decide_ticket(self, ticket_id: str, state: str, decided_by: str,
                      decided_at: float, note: str = "") -> dict[str, Any]:
        """Atomically move a pending ticket to a decided state."""
        with self._lock:
            ticket = self._tickets.get(ticket_id)
            if ticket is None:
                raise LookupError(f"ticket {ticket_id} unknown")
            if ticket["state"] != "pending":
                raise StateConflict(f"ticket {ticket_id} already {ticket['state']}")
            ticket = dict(ticket)
            ticket.update(state=state, decided_by=decided_by, decided_at=decided_at,
                          decision_note=note)
            self._tickets[ticket_id] = ticket
            self._flush()
            return dict(ticket)

    # -- idempotency records -----------------------------------------------------

    def idempotency_get(self, key: str) -> Optional[dict[str, Any]]:
        with self._lock:
            record = self._idempotency.get(key)
            return dict(record) if record else None

    def idempotency_put_if_absent(self, key: str, result: dict[str, Any]) -> dict[str, Any]:
        """Store the first result for a key; later calls get the stored one back."""
        with self._lock:
            stored = self._idempotency.get(key)
            if stored is not None:
                return dict(stored)
            self._idempotency[key] = result
            self._flush()
            return dict(result)

    # -- business objects (synthetic catalog's table) ------------------------------

    def put_object(self, obj: dict[str, Any]) -> None:
        with self._lock:
            record = dict(obj)
            record.setdefault("version", 1)
            self._objects[record["id"]] = record
            self._flush()

    def get_object(self, object_id: str) -> Optional[dict[str, Any]]:
        with self._lock:
            record = self._objects.get(object_id)
            return json.loads(json.dumps(record)) if record else None

    def list_objects(self) -> list[dict[str, Any]]:
        with self._lock:
            return [json.loads(json.dumps(o)) for o in self._objects.values()]

    def write_object(self, object_id: str, fields: Mapping[str, Any],
                     expected_version: Optional[int] = None) -> dict[str, Any]:
        """Apply a field update; optimistic when expected_version is given."""
        with self._lock:
            record = self._objects.get(object_id)
            if record is None:
                raise LookupError(f"object {object_id} unknown")
            if expected_version is not None and record["version"] != expected_version:
                raise VersionConflict(
                    f"object {object_id}: stored version {record['version']}, "
                    f"submitted {expected_version}")
            record = dict(record)
            data = dict(record.get("data", {}))
            data.update(fields)
            record["data"] = data
            record["version"] += 1
            self._objects[object_id] = record
            self._flush()
            return dict(record)

    def delete_object(self, object_id: str) -> None:
        with self._lock:
            if object_id not in self._objects:
                raise LookupError(f"object {object_id} unknown")
            del self._objects[object_id]
            self._flush()

    # -- single-writer task leases ---------------------------------------------------

    def acquire_lease(self, task_id: str, owner: str, now: float, ttl: float) -> bool:
        with self._lock:
            lease = self._leases.get(task_id)
            if lease and lease["owner"] != owner and lease["expires_at"] > now:
                return False
            self._leases[task_id] = {"owner": owner, "expires_at": now + ttl}
            self._flush()
            return True

    def release_lease(self, task_id: str, owner: str) -> None:
        with self._lock:
            lease = self._leases.get(task_id)
            if lease and lease["owner"] == owner:
                del self._leases[task_id]
                self._flush()

    # -- backend hooks -------------------------------------------------------------

    def _flush(self) -> None:
        """Durability hook; the in-memory backend keeps nothing."""

    def _append_event_durable(self, event: Event) -> None:
        """Durability hook; the in-memory backend keeps events in the log list only."""


# Both backends satisfy the same contract; the in-memory class defines it.
Storage = MemoryStorage


class FileStorage(MemoryStorage):
    """Crash-safe backend: kv snapshot file + per-task event logs."""

    def __init__(self, root: str | os.PathLike[str]) -> None:
        super().__init__()
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "events").mkdir(exist_ok=True)
        self._kv_path = self.root / "kv.json"
        self._load()

    def _load(self) -> None:
        if self._kv_path.exists():
            snapshot = json.loads(self._kv_path.read_text())
            self._tasks = snapshot.get("tasks", {})
            self._checkpoints = snapshot.get("checkpoints", {})
            self._tickets = snapshot.get("tickets", {})
            self._idempotency = snapshot.get("idempotency", {})
            self._objects = snapshot.get("objects", {})
            self._leases = snapshot.get("leases", {})
            self._scenarios = snapshot.get("scenarios", {})
        for path in sorted((self.root / "events").glob("*.jsonl")):
            log = [Event.from_dict(json.loads(line))
                   for line in path.read_text().splitlines() if line.strip()]
            log.sort(key=lambda e: e.seq)
            if log:
                self._events[log[0].task_id] = log
        # Arrival order across tasks is rebuilt best-effort; per-task seq stays exact.
        arrivals = [(e.timestamp, e.task_id, e.seq) for log in self._events.values() for e in log]
        self._feed = [(tid, seq) for _, tid, seq in sorted(arrivals)]

    def _flush(self) -> None:
        snapshot = {
            "tasks": self._tasks,
            "checkpoints": self._checkpoints,
            "tickets": self._tickets,
            "idempotency": self._idempotency,
            "objects": self._objects,
            "leases": self._leases,
            "scenarios": self._scenarios,
        }
        tmp = self._kv_path.with_suffix(".json.tmp")
        with open(tmp, "w") as fh:
            json.dump(snapshot, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self._kv_path)

    def _append_event_durable(self, event: Event) -> None:
        path = self.root / "events" / f"{event.task_id}.jsonl"
        with open(path, "a") as fh:
            fh.write(json.dumps(event.to_dict()) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def fold_events(events: list[Event]) -> dict[str, Any]:
    """Reduce an event log to the state summary a checkpoint must agree with."""
    tier: Optional[str] = None
    phase: Optional[str] = None
    critic_rounds = 0
    recovery_rounds = 0
    for event in events:
        if event.name == "runner.tier.selected":
            tier = event.payload.get("tier")
        elif event.name == "runner.phase.changed":
            phase = event.payload.get("to")
        elif event.name == "agent.critic.reviewed":
            critic_rounds += 1
        elif event.name == "agent.recovery.decided":
            recovery_rounds += 1
    return {"tier": tier, "phase": phase,
            "critic_rounds": critic_rounds, "recovery_rounds": recovery_rounds}


def replay(storage: MemoryStorage, task_id: str) -> dict[str, Any]:
    """Fold the event log and check it against the stored checkpoint.

    Returns the fold summary; raises ReplayDivergence when the log has seq gaps
    or disagrees with the checkpoint on tier, phase, or round counts.
    """
    events = storage.events(task_id)
    for position, event in enumerate(events, start=1):
        if event.seq != position:
            raise ReplayDivergence(
                f"{task_id}: event seq {event.seq} at position {position} (gap or reorder)")
    summary = fold_events(events)
    if summary["phase"] is None:
        summary["phase"] = "planning"  # initial phase is entered, never transitioned to
    cp = storage.load_checkpoint(task_id)
    if cp is None:
        if events:
            raise ReplayDivergence(f"{task_id}: events exist but no checkpoint")
        return summary
    expected = {
        "tier": cp.tier.value,
        "phase": cp.phase.value,
        "critic_rounds": len(cp.opinions_for(RoleName.CRITIC)),
        "recovery_rounds": len(cp.recovery_history),
    }
    mismatches = {k: (summary[k], expected[k]) for k in expected if summary[k] != expected[k]}
    if mismatches:
        raise ReplayDivergence(f"{task_id}: replay/checkpoint mismatch {mismatches}")
    return summary
