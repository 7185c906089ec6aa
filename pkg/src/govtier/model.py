"""Shared domain types: tasks, scopes, tiers, phases, opinions, checkpoints.

Every type serializes to a JSON object with snake_case field names. Loading is
strict: missing required fields and unknown fields are both rejected, so stored
records cannot silently drift from the code that wrote them.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional

HISTORY_WINDOW_SECONDS = 30 * 24 * 3600.0
DEFAULT_OBJECT_COUNT_CAP = 100

OP_TYPE_SIGNAL = {
    "read": 0.0,
    "single_write": 0.3,
    "batch_write": 0.7,
    "delete_irreversible": 1.0,
}


class OpKind(str, Enum):
    READ = "read"
    SINGLE_WRITE = "single_write"
    BATCH_WRITE = "batch_write"
    DELETE_IRREVERSIBLE = "delete_irreversible"


class Tier(str, Enum):
    LIGHT = "light"
    STANDARD = "standard"
    FULL = "full"

    @property
    def rank(self) -> int:
        return _TIER_RANK[self]


_TIER_RANK = {Tier.LIGHT: 0, Tier.STANDARD: 1, Tier.FULL: 2}


class Phase(str, Enum):
    PLANNING = "planning"
    CRITICIZING = "criticizing"
    EXECUTING = "executing"
    VERIFYING = "verifying"
    RECOVERING = "recovering"
    FINALIZING = "finalizing"
    RETROSPECTING = "retrospecting"
    PENDING_APPROVAL = "pending_approval"
    BLOCKED = "blocked"
    COMPLETED = "completed"
    FAILED = "failed"


#: Phases from which no continuation is possible.
TERMINAL_PHASES = frozenset({Phase.COMPLETED, Phase.FAILED})
#: Phases where the task waits for an external actor (human or clock).
HOLD_PHASES = frozenset({Phase.PENDING_APPROVAL, Phase.BLOCKED})


class RoleName(str, Enum):
    ORCHESTRATOR = "orchestrator"
    WORKER = "worker"
    CRITIC = "critic"
    VERIFIER = "verifier"
    RECOVERY = "recovery"
    RETROSPECTOR = "retrospector"


class CheckKind(str, Enum):
    OBJECT_EXISTS = "object_exists"
    FIELD_EQUALS = "field_equals"
    COUNT_EQUALS = "count_equals"
    TOOL_RESULT_FLAG = "tool_result_flag"
    CUSTOM_PREDICATE_ID = "custom_predicate_id"


def canonical_json(value: Any) -> str:
    """Serialize with sorted keys and fixed separators; the hashing/compare form."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def check_fields(record: Mapping[str, Any], type_name: str,
                 required: Iterable[str], optional: Iterable[str] = ()) -> None:
    """Reject records with missing required fields or any unknown field."""
    if not isinstance(record, Mapping):
        raise ValueError(f"{type_name}: expected an object, got {type(record).__name__}")
    required = set(required)
    allowed = required | set(optional)
    missing = required - set(record)
    if missing:
        raise ValueError(f"{type_name}: missing fields {sorted(missing)}")
    unknown = set(record) - allowed
    if unknown:
        raise ValueError(f"{type_name}: unknown fields {sorted(unknown)}")


def _unit_interval(name: str, value: Any) -> float:
    value = float(value)
    if math.isnan(value) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


@dataclass(frozen=True, slots=True)
class ScopeDescriptor:
    """Tenant/brand/location boundary a task is allowed to touch.

    cross_domain is derived from the brand set (or an explicit cross-boundary
    flag supplied at construction); callers never set it independently.
    """

    tenant_id: str
    brand_ids: frozenset[str] = frozenset()
    location_ids: frozenset[str] = frozenset()
    cross_domain: bool = False

    def __post_init__(self) -> None:
        if not self.tenant_id:
            raise ValueError("ScopeDescriptor: tenant_id must be non-empty")
        object.__setattr__(self, "brand_ids", frozenset(self.brand_ids))
        object.__setattr__(self, "location_ids", frozenset(self.location_ids))
        if len(self.brand_ids) > 1:
            object.__setattr__(self, "cross_domain", True)

    @property
    def single_boundary(self) -> bool:
        """True when the scope stays inside one brand and one domain."""
        return len(self.brand_ids) <= 1 and not self.cross_domain

    def to_dict(self) -> dict[str, Any]:
        return {
            "tenant_id": self.tenant_id,
            "brand_ids": sorted(self.brand_ids),
            "location_ids": sorted(self.location_ids),
            "cross_domain": self.cross_domain,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "ScopeDescriptor":
        check_fields(record, "ScopeDescriptor", ["tenant_id"],
                     ["brand_ids", "location_ids", "cross_domain"])
        return cls(
            tenant_id=str(record["tenant_id"]),
            brand_ids=frozenset(record.get("brand_ids", ())),
            location_ids=frozenset(record.get("location_ids", ())),
            cross_domain=bool(record.get("cross_domain", False)),
        )


@dataclass(frozen=True, slots=True)
class SuccessCriterion:
    """One machine-checkable completion condition."""

    id: str
    description: str
    check_kind: CheckKind
    target: Any

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("SuccessCriterion: id must be non-empty")
        object.__setattr__(self, "check_kind", CheckKind(self.check_kind))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "description": self.description,
            "check_kind": self.check_kind.value,
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "SuccessCriterion":
        check_fields(record, "SuccessCriterion", ["id", "check_kind", "target"], ["description"])
        return cls(
            id=str(record["id"]),
            description=str(record.get("description", "")),
            check_kind=CheckKind(record["check_kind"]),
            target=record["target"],
        )


@dataclass(frozen=True, slots=True)
class RiskSignals:
    """The four routing inputs, each normalized to [0, 1]."""

    op_type: float
    obj_count: float
    cross_domain: int
    hist_fail: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "op_type", _unit_interval("op_type", self.op_type))
        object.__setattr__(self, "obj_count", _unit_interval("obj_count", self.obj_count))
        if self.cross_domain not in (0, 1):
            raise ValueError(f"cross_domain must be 0 or 1, got {self.cross_domain}")
        object.__setattr__(self, "hist_fail", _unit_interval("hist_fail", self.hist_fail))

    def as_tuple(self) -> tuple[float, float, int, float]:
        return (self.op_type, self.obj_count, self.cross_domain, self.hist_fail)

    def to_dict(self) -> dict[str, Any]:
        return {
            "op_type": self.op_type,
            "obj_count": self.obj_count,
            "cross_domain": self.cross_domain,
            "hist_fail": self.hist_fail,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "RiskSignals":
        check_fields(record, "RiskSignals", ["op_type", "obj_count", "cross_domain", "hist_fail"])
        return cls(
            op_type=float(record["op_type"]),
            obj_count=float(record["obj_count"]),
            cross_domain=int(record["cross_domain"]),
            hist_fail=float(record["hist_fail"]),
        )


@dataclass(frozen=True, slots=True)
class Task:
    """A unit of work submitted to the runner."""

    id: str
    goal: str
    op_kind: OpKind
    scope: ScopeDescriptor
    constraints: tuple[dict[str, Any], ...] = ()
    context: dict[str, Any] = field(default_factory=dict)
    affected_object_estimate: int = 0
    success_criteria: tuple[SuccessCriterion, ...] = ()
    tenant_id: str = ""
    initiator_user_id: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("Task: id must be non-empty")
        object.__setattr__(self, "op_kind", OpKind(self.op_kind))
        object.__setattr__(self, "constraints", tuple(dict(c) for c in self.constraints))
        object.__setattr__(self, "success_criteria", tuple(self.success_criteria))
        if self.affected_object_estimate < 0:
            raise ValueError("Task: affected_object_estimate must be non-negative")
        if not self.tenant_id:
            object.__setattr__(self, "tenant_id", self.scope.tenant_id)
        if self.tenant_id != self.scope.tenant_id:
            raise ValueError("Task: tenant_id disagrees with scope.tenant_id")

    @property
    def is_write(self) -> bool:
        return self.op_kind is not OpKind.READ

    def category(self) -> str:
        """History-lookup key: operation kind crossed with the boundary flag."""
        return f"{self.op_kind.value}:{'x' if self.scope.cross_domain else 'local'}"

    def with_success_criteria(self, criteria: Iterable[SuccessCriterion]) -> "Task":
        return Task(
            id=self.id, goal=self.goal, op_kind=self.op_kind, scope=self.scope,
            constraints=self.constraints, context=dict(self.context),
            affected_object_estimate=self.affected_object_estimate,
            success_criteria=tuple(criteria), tenant_id=self.tenant_id,
            initiator_user_id=self.initiator_user_id,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "goal": self.goal,
            "op_kind": self.op_kind.value,
            "scope": self.scope.to_dict(),
            "constraints": [dict(c) for c in self.constraints],
            "context": dict(self.context),
            "affected_object_estimate": self.affected_object_estimate,
            "success_criteria": [c.to_dict() for c in self.success_criteria],
            "tenant_id": self.tenant_id,
            "initiator_user_id": self.initiator_user_id,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "Task":
        check_fields(
            record, "Task", ["id", "goal", "op_kind", "scope"],
            ["constraints", "context", "affected_object_estimate", "success_criteria",
             "tenant_id", "initiator_user_id"])
        return cls(
            id=str(record["id"]),
            goal=str(record["goal"]),
            op_kind=OpKind(record["op_kind"]),
            scope=ScopeDescriptor.from_dict(record["scope"]),
            constraints=tuple(record.get("constraints", ())),
            context=dict(record.get("context", {})),
            affected_object_estimate=int(record.get("affected_object_estimate", 0)),
            success_criteria=tuple(
                SuccessCriterion.from_dict(c) for c in record.get("success_criteria", ())),
            tenant_id=str(record.get("tenant_id", "")),
            initiator_user_id=str(record.get("initiator_user_id", "")),
        )


@dataclass(frozen=True, slots=True)
class AgentOpinion:
    """One role invocation's recorded output."""

    role: RoleName
    round: int
    payload: dict[str, Any]
    confidence: Optional[float] = None
    timestamp: float = 0.0
    config_fingerprint: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", RoleName(self.role))
        if self.round < 0:
            raise ValueError("AgentOpinion: round must be non-negative")
        if self.role is RoleName.CRITIC and self.confidence is None:
            raise ValueError("AgentOpinion: critic opinions must carry confidence")
        if self.confidence is not None:
            object.__setattr__(self, "confidence", _unit_interval("confidence", self.confidence))

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role.value,
            "round": self.round,
            "payload": self.payload,
            "confidence": self.confidence,
            "timestamp": self.timestamp,
            "config_fingerprint": self.config_fingerprint,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "AgentOpinion":
        check_fields(record, "AgentOpinion", ["role", "round", "payload"],
                     ["confidence", "timestamp", "config_fingerprint"])
        confidence = record.get("confidence")
        return cls(
            role=RoleName(record["role"]),
            round=int(record["round"]),
            payload=dict(record["payload"]),
            confidence=None if confidence is None else float(confidence),
            timestamp=float(record.get("timestamp", 0.0)),
            config_fingerprint=str(record.get("config_fingerprint", "")),
        )


@dataclass(frozen=True, slots=True)
class Checkpoint:
    """The authoritative persisted state of one task.

    Role outputs are stored in their canonical record form (the same JSON shape
    the role types serialize to); the runner re-hydrates them on resume. version
    increases by exactly 1 on every persist (compare-and-set in the store).
    """

    task_id: str
    tier: Tier
    phase: Phase
    active_roles: tuple[RoleName, ...]
    opinions: tuple[AgentOpinion, ...] = ()
    verification: Optional[dict[str, Any]] = None
    recovery_history: tuple[dict[str, Any], ...] = ()
    avoidance: tuple[str, ...] = ()
    retrospective: Optional[dict[str, Any]] = None
    version: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "tier", Tier(self.tier))
        object.__setattr__(self, "phase", Phase(self.phase))
        object.__setattr__(self, "active_roles", tuple(RoleName(r) for r in self.active_roles))
        object.__setattr__(self, "opinions", tuple(self.opinions))
        object.__setattr__(self, "recovery_history", tuple(self.recovery_history))
        object.__setattr__(self, "avoidance", tuple(self.avoidance))
        if self.version < 1:
            raise ValueError("Checkpoint: version starts at 1")

    def opinions_for(self, role: RoleName) -> tuple[AgentOpinion, ...]:
        return tuple(o for o in self.opinions if o.role is role)

    def advance(self, **changes: Any) -> "Checkpoint":
        """Copy with changes applied and the version bumped by one."""
        changes.setdefault("version", self.version + 1)
        return dataclasses.replace(self, **changes)

    def with_opinion(self, opinion: AgentOpinion, **changes: Any) -> "Checkpoint":
        return self.advance(opinions=self.opinions + (opinion,), **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "tier": self.tier.value,
            "phase": self.phase.value,
            "active_roles": [r.value for r in self.active_roles],
            "opinions": [o.to_dict() for o in self.opinions],
            "verification": self.verification,
            "recovery_history": list(self.recovery_history),
            "avoidance": list(self.avoidance),
            "retrospective": self.retrospective,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "Checkpoint":
        check_fields(
            record, "Checkpoint", ["task_id", "tier", "phase", "active_roles", "version"],
            ["opinions", "verification", "recovery_history", "avoidance", "retrospective"])
        return cls(
            task_id=str(record["task_id"]),
            tier=Tier(record["tier"]),
            phase=Phase(record["phase"]),
            active_roles=tuple(RoleName(r) for r in record["active_roles"]),
            opinions=tuple(AgentOpinion.from_dict(o) for o in record.get("opinions", ())),
            verification=record.get("verification"),
            recovery_history=tuple(record.get("recovery_history", ())),
            avoidance=tuple(record.get("avoidance", ())),
            retrospective=record.get("retrospective"),
            version=int(record["version"]),
        )


@dataclass(frozen=True, slots=True)
class FailureRecord:
    """One historical task outcome used for the hist_fail signal."""

    category: str
    timestamp: float
    failed: bool

    def to_dict(self) -> dict[str, Any]:
        return {"category": self.category, "timestamp": self.timestamp, "failed": self.failed}

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "FailureRecord":
        check_fields(record, "FailureRecord", ["category", "timestamp", "failed"])
        return cls(str(record["category"]), float(record["timestamp"]), bool(record["failed"]))


class FailureHistory:
    """Trailing-window failure fractions per task category."""

    def __init__(self, records: Iterable[FailureRecord] = ()) -> None:
        self._records: list[FailureRecord] = list(records)

    def record(self, category: str, timestamp: float, failed: bool) -> None:
        self._records.append(FailureRecord(category, timestamp, failed))

    def failure_fraction(self, category: str, now: float,
                         window: float = HISTORY_WINDOW_SECONDS) -> float:
        """Failed share of same-category outcomes in the trailing window; 0 cold."""
        hits = [r for r in self._records
                if r.category == category and now - window <= r.timestamp <= now]
        if not hits:
            return 0.0
        return sum(1 for r in hits if r.failed) / len(hits)

    def to_dict(self) -> dict[str, Any]:
        return {"records": [r.to_dict() for r in self._records]}

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "FailureHistory":
        check_fields(record, "FailureHistory", ["records"])
        return cls(FailureRecord.from_dict(r) for r in record["records"])


def derive_risk_signals(task: Task, history: FailureHistory, now: float = 0.0,
                        object_count_cap: int = DEFAULT_OBJECT_COUNT_CAP) -> RiskSignals:
    """Map a task onto the four routing signals.

    op_type comes from a fixed table over the operation kind; obj_count saturates
    at the configured cap; hist_fail is the trailing-window failure fraction for
    the task's category and defaults to 0 with no history.
    """
    if object_count_cap <= 0:
        raise ValueError("object_count_cap must be positive")
    return RiskSignals(
        op_type=OP_TYPE_SIGNAL[task.op_kind.value],
        obj_count=min(task.affected_object_estimate, object_count_cap) / object_count_cap,
        cross_domain=1 if task.scope.cross_domain else 0,
        hist_fail=history.failure_fraction(task.category(), now),
    )
