"""Access gateway: the single checked path from agent intent to tool effect.

Every intent passes six layers in fixed order: schema, permission, scope,
risk, idempotency, execution.  A layer that trips returns a typed error
result; the risk layer can instead hold the intent behind an approval
ticket.  Dry runs stop after the risk layer and never touch state.
"""

from __future__ import annotations

import hashlib
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

from .catalog import (
    RiskLevel,
    ToolCatalog,
    ToolError,
    ToolSpec,
    canonical_payload,
    payload_fingerprint,
    validate_payload,
)
from .model import RoleName, Task, Tier, canonical_json, check_fields
from .store import StateConflict, Storage

ERROR_CODES = frozenset(
    {
        "schema_invalid",
        "permission_denied",
        "scope_violation",
        "idempotency_conflict",
        "execution_failed",
        "ambiguous_query",
    }
)

RESULT_STATUSES = ("ok", "held_for_approval", "error")

TICKET_STATES = ("pending", "approved", "rejected")

# Permission required to decide approval tickets or record overrides.
APPROVAL_AUTHORITY = "approvals.decide"
OVERRIDE_AUTHORITY = "overrides.record"


class AuthorityError(Exception):
    """Caller lacks the permission an operator action requires."""


@dataclass(frozen=True, slots=True)
class ToolIntent:
    """A role's request to run one tool with one payload."""

    tool: str
    payload: Mapping[str, object]
    role: RoleName
    task_id: str
    dry_run: bool = False

    def to_dict(self) -> dict:
        return {
            "tool": self.tool,
            "payload": dict(self.payload),
            "role": self.role.value,
            "task_id": self.task_id,
            "dry_run": self.dry_run,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, object]) -> "ToolIntent":
        check_fields(
            record, "ToolIntent", required=("tool", "payload", "role", "task_id", "dry_run")
        )
        return cls(
            tool=str(record["tool"]),
            payload=dict(record["payload"]),
            role=RoleName(record["role"]),
            task_id=str(record["task_id"]),
            dry_run=bool(record["dry_run"]),
        )


@dataclass(frozen=True, slots=True)
class ToolResult:
    """Outcome of one gateway submission."""

    status: str
    data: Mapping[str, object] = field(default_factory=dict)
    confidence: float = 1.0
    ambiguity: tuple[str, ...] = ()
    evidence_refs: tuple[str, ...] = ()
    next_step_suggestions: tuple[str, ...] = ()
    error_code: str | None = None
    retry_eligible: bool = False

    def __post_init__(self) -> None:
        if self.status not in RESULT_STATUSES:
            raise ValueError(f"unknown result status {self.status!r}")
        if self.status == "error":
            if self.error_code not in ERROR_CODES:
                raise ValueError(f"error result needs a known error_code, got {self.error_code!r}")
        elif self.error_code is not None:
            raise ValueError("non-error result must not carry an error_code")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "data": dict(self.data),
            "confidence": self.confidence,
            "ambiguity": list(self.ambiguity),
            "evidence_refs": list(self.evidence_refs),
            "next_step_suggestions": list(self.next_step_suggestions),
            "error_code": self.error_code,
            "retry_eligible": self.retry_eligible,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, object]) -> "ToolResult":
        check_fields(
            record,
            "ToolResult",
            required=(
                "status",
                "data",
                "confidence",
                "ambiguity",
                "evidence_refs",
                "next_step_suggestions",
                "error_code",
                "retry_eligible",
            ),
        )
        code = record["error_code"]
        return cls(
            status=str(record["status"]),
            data=dict(record["data"]),
            confidence=float(record["confidence"]),
            ambiguity=tuple(str(x) for x in record["ambiguity"]),
            evidence_refs=tuple(str(x) for x in record["evidence_refs"]),
            next_step_suggestions=tuple(str(x) for x in record["next_step_suggestions"]),
            error_code=None if code is None else str(code),
            retry_eligible=bool(record["retry_eligible"]),
        )


@dataclass(frozen=True, slots=True)
class ApprovalTicket:
    """A held intent waiting for a human decision."""

    id: str
    task_id: str
    intent: ToolIntent
    intent_key: str
    risk: RiskLevel
    rationale: str
    state: str
    created_at: float
    decided_by: str | None = None
    decided_at: float | None = None
    decision_note: str = ""
    consumed: bool = False

    def __post_init__(self) -> None:
        if self.state not in TICKET_STATES:
            raise ValueError(f"unknown ticket state {self.state!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "task_id": self.task_id,
            "intent": self.intent.to_dict(),
            "intent_key": self.intent_key,
            "risk": self.risk.value,
            "rationale": self.rationale,
            "state": self.state,
            "created_at": self.created_at,
            "decided_by": self.decided_by,
            "decided_at": self.decided_at,
            "decision_note": self.decision_note,
            "consumed": self.consumed,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, object]) -> "ApprovalTicket":
        check_fields(
            record,
            "ApprovalTicket",
            required=(
                "id",
                "task_id",
                "intent",
                "intent_key",
                "risk",
                "rationale",
                "state",
                "created_at",
            ),
            optional=("decided_by", "decided_at", "decision_note", "consumed"),
        )
        decided_at = record.get("decided_at")
        return cls(
            id=str(record["id"]),
            task_id=str(record["task_id"]),
            intent=ToolIntent.from_dict(record["intent"]),
            intent_key=str(record["intent_key"]),
            risk=RiskLevel(record["risk"]),
            rationale=str(record["rationale"]),
            state=str(record["state"]),
            created_at=float(record["created_at"]),
            decided_by=None if record.get("decided_by") is None else str(record["decided_by"]),
            decided_at=None if decided_at is None else float(decided_at),
            decision_note=str(record.get("decision_note", "")),
            consumed=bool(record.get("consumed", False)),
        )


@dataclass(frozen=True, slots=True)
class RuntimeContext:
    """Per-task facts the gateway needs beyond the intent itself."""

    task: Task
    tier: Tier
    user_id: str
    permissions: frozenset[str]


@dataclass(frozen=True, slots=True)
class GatewayConfig:
    approval_threshold: RiskLevel = RiskLevel.MEDIUM
    batch_escalation_threshold: int = 10
    backoff_base_seconds: float = 0.1
    backoff_max_attempts: int = 5
    # ungoverned mode: assessed risk is recorded but never holds execution
    risk_layer_enabled: bool = True


def idempotency_key(task_id: str, tool: str, canonical: Mapping[str, object]) -> str:
    """Stable identity of one effect attempt within one task."""
    body = canonical_json({"task_id": task_id, "tool": tool, "payload": canonical})
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


class Gateway:
    """Checked execution path over a tool catalog and shared storage."""

    def __init__(
        self,
        storage: Storage,
        catalog: ToolCatalog,
        config: GatewayConfig | None = None,
        clock: Callable[[], float] | None = None,
        after_commit: Callable[[str], None] | None = None,
    ) -> None:
        self.storage = storage
        self.catalog = catalog
        self.config = config or GatewayConfig()
        self.clock = clock or (lambda: 0.0)
        self.after_commit = after_commit or (lambda label: None)
        self._conflict_attempts: dict[str, int] = {}

    # --- risk ---------------------------------------------------------

    def assess_risk(self, spec: ToolSpec, payload: Mapping[str, object]) -> RiskLevel:
        """Base risk from the catalog raised by the fixed escalators."""
        level = spec.base_risk
        if spec.op_kind.value == "batch_write":
            object_ids = payload.get("object_ids") or []
            if isinstance(object_ids, list) and len(object_ids) > self.config.batch_escalation_threshold:
                level = max(level, RiskLevel.MEDIUM, key=lambda r: r.rank)
        if spec.op_kind.value == "delete_irreversible":
            level = RiskLevel.HIGH
        return level

    def intent_risk(self, intent: ToolIntent) -> RiskLevel:
        spec = self.catalog.spec(intent.tool)
        if spec is None:
            return RiskLevel.HIGH
        return self.assess_risk(spec, intent.payload)

    # --- main path ----------------------------------------------------

    def execute_intent(self, intent: ToolIntent, runtime: RuntimeContext) -> ToolResult:
        if intent.dry_run:
            return self.dry_run(intent, runtime)
        spec = self.catalog.spec(intent.tool)
        if spec is None:
            return _layer_error(
                "schema_invalid", "schema", f"unknown tool {intent.tool}", {"tool": intent.tool}
            )
        checked = self._check_static_layers(spec, intent, runtime)
        if checked is not None:
            return checked

        risk = self.assess_risk(spec, intent.payload)
        key = idempotency_key(intent.task_id, intent.tool, canonical_payload(spec, intent.payload))

        if self.config.risk_layer_enabled and risk.rank >= self.config.approval_threshold.rank:
            held = self._apply_approval_gate(intent, runtime, risk, key)
            if held is not None:
                return held

        stored = self.storage.idempotency_get(key)
        if stored is not None:
            result = ToolResult.from_dict(stored)
            self._emit_execution(intent, key, risk, result, memoized=True)
            return result

        result = self._execute(spec, intent, runtime, key)
        self._emit_execution(intent, key, risk, result, memoized=False)
        self.after_commit(f"executed:{intent.tool}")
        return result

    def dry_run(self, intent: ToolIntent, runtime: RuntimeContext) -> ToolResult:
        """Layers one through four plus a side-effect-free preview.

        Never writes state, never consumes an idempotency key, never
        opens an approval ticket.
        """
        spec = self.catalog.spec(intent.tool)
        if spec is None:
            return _layer_error(
                "schema_invalid", "schema", f"unknown tool {intent.tool}", {"tool": intent.tool}
            )
        checked = self._check_static_layers(spec, intent, runtime)
        if checked is not None:
            return checked
        risk = self.assess_risk(spec, intent.payload)
        if not spec.supports_dry_run:
            return _layer_error(
                "execution_failed",
                "execution",
                f"{intent.tool} does not support dry runs",
                {"reason": "dry_run_unsupported"},
            )
        try:
            preview = self.catalog._raw_invoke(
                self.storage, intent.tool, intent.payload, intent.task_id, preview=True
            )
        except ToolError as exc:
            return _layer_error(exc.code, "execution", exc.message, exc.data, exc.retry_eligible)
        return ToolResult(
            status="ok",
            data={
                "dry_run": True,
                "risk": risk.value,
                "would_require_approval": risk.rank >= self.config.approval_threshold.rank,
                "preview": preview,
            },
        )

    def check_version(self, intent: ToolIntent, runtime: RuntimeContext) -> ToolResult:
        """Advisory preflight: do the versions the payload pins still hold?"""
        spec = self.catalog.spec(intent.tool)
        if spec is None:
            return _layer_error(
                "schema_invalid", "schema", f"unknown tool {intent.tool}", {"tool": intent.tool}
            )
        checked = self._check_static_layers(spec, intent, runtime)
        if checked is not None:
            return checked
        expected = intent.payload.get("expected_version")
        object_id = intent.payload.get("object_id")
        if expected is None or object_id is None:
            return ToolResult(status="ok", data={"versions": {}, "pinned": False})
        record = self.storage.get_object(str(object_id))
        actual = None if record is None else record["version"]
        if actual != expected:
            return ToolResult(
                status="error",
                error_code="idempotency_conflict",
                retry_eligible=True,
                data={
                    "object_id": object_id,
                    "expected_version": expected,
                    "actual_version": actual,
                    "backoff_seconds": self._backoff_hint(f"ver:{object_id}"),
                },
            )
        return ToolResult(
            status="ok", data={"versions": {str(object_id): actual}, "pinned": True}
        )

    # --- approvals ------------------------------------------------------

    def pending_tickets(self, task_id: str | None = None) -> list[ApprovalTicket]:
        tickets = [ApprovalTicket.from_dict(t) for t in self.storage.list_tickets(state="pending")]
        if task_id is not None:
            tickets = [t for t in tickets if t.task_id == task_id]
        return sorted(tickets, key=lambda t: t.created_at)

    def ticket(self, ticket_id: str) -> ApprovalTicket | None:
        record = self.storage.get_ticket(ticket_id)
        return None if record is None else ApprovalTicket.from_dict(record)

    def decide_approval(
        self,
        ticket_id: str,
        approve: bool,
        decider_id: str,
        decider_permissions: frozenset[str],
        note: str = "",
    ) -> ApprovalTicket:
        """Atomically settle a pending ticket; double decisions conflict."""
        if APPROVAL_AUTHORITY not in decider_permissions:
            raise AuthorityError(f"{decider_id} lacks {APPROVAL_AUTHORITY}")
        state = "approved" if approve else "rejected"
        record = self.storage.decide_ticket(
            ticket_id,
            state=state,
            decided_by=decider_id,
            decided_at=self.clock(),
            note=note,
        )
        ticket = ApprovalTicket.from_dict(record)
        self.storage.append_event(
            ticket.task_id,
            "gateway.approval.decided",
            {
                "ticket_id": ticket.id,
                "decision": state,
                "decided_by": decider_id,
                "tool": ticket.intent.tool,
            },
            self.clock(),
        )
        self.after_commit(f"approval_decided:{ticket.id}")
        return ticket

    def consume_ticket(self, ticket_id: str) -> None:
        """Mark a decided ticket as acted upon so it cannot gate again."""
        record = self.storage.get_ticket(ticket_id)
        if record is None:
            raise LookupError(f"no ticket {ticket_id}")
        record = dict(record)
        record["consumed"] = True
        self.storage.put_ticket(record)

    # --- operator override ----------------------------------------------

    def override_block(
        self,
        task_id: str,
        finding_ids: list[str],
        operator_id: str,
        operator_permissions: frozenset[str],
    ) -> dict:
        """Record an elevated operator's decision to release a reviewer block.

        Only the record is written here; resuming the task is the
        engine's job.  Raises AuthorityError without the override
        permission, LookupError for unknown tasks, and StateConflict
        when the task is not blocked by a reviewer verdict.
        """
        from .model import AgentOpinion

        if OVERRIDE_AUTHORITY not in operator_permissions:
            raise AuthorityError(f"{operator_id} lacks {OVERRIDE_AUTHORITY}")
        cp = self.storage.load_checkpoint(task_id)
        if cp is None:
            raise LookupError(f"no task {task_id}")
        if cp.phase.value != "blocked":
            raise StateConflict(f"task {task_id} is not blocked")
        block = _last_block_opinion(cp)
        if block is None or not str(block.get("reason", "")).startswith("critic"):
            raise StateConflict(f"task {task_id} has no reviewer block to override")
        record = {
            "kind": "override",
            "finding_ids": list(finding_ids),
            "operator_id": operator_id,
            "at": self.clock(),
        }
        opinion = AgentOpinion(
            role=RoleName.ORCHESTRATOR,
            round=len(cp.opinions_for(RoleName.ORCHESTRATOR)),
            payload=record,
            confidence=None,
            timestamp=self.clock(),
            config_fingerprint="operator",
        )
        updated = cp.with_opinion(opinion)
        self.storage.persist_checkpoint(updated)
        self.storage.append_event(
            task_id,
            "runner.override.recorded",
            {"finding_ids": list(finding_ids), "operator_id": operator_id},
            self.clock(),
        )
        self.after_commit(f"override_recorded:{task_id}")
        return record

    # --- internals --------------------------------------------------------

    def _check_static_layers(
        self, spec: ToolSpec, intent: ToolIntent, runtime: RuntimeContext
    ) -> ToolResult | None:
        problems = validate_payload(spec, intent.payload)
        if problems:
            return _layer_error(
                "schema_invalid", "schema", "payload failed schema checks", {"problems": problems}
            )
        missing = spec.required_permissions - runtime.permissions
        if missing:
            return _layer_error(
                "permission_denied",
                "permission",
                f"{runtime.user_id} lacks permissions",
                {"missing": sorted(missing)},
            )
        scope = runtime.task.scope
        for param, boundary in spec.scope_fields.items():
            value = intent.payload.get(param)
            values = value if isinstance(value, list) else [value]
            for item in values:
                if not _in_scope(boundary, item, scope):
                    return _layer_error(
                        "scope_violation",
                        "scope",
                        f"{param}={item!r} lies outside the task scope",
                        {
                            "param": param,
                            "value": item,
                            "boundary": boundary,
                            "allowed": _allowed_values(boundary, scope),
                        },
                    )
        return None

    def _apply_approval_gate(
        self, intent: ToolIntent, runtime: RuntimeContext, risk: RiskLevel, key: str
    ) -> ToolResult | None:
        """Return a held/error result, or None when execution may proceed."""
        existing = self._ticket_for_key(intent.task_id, key)
        if existing is not None:
            if existing.state == "pending":
                return _held_result(existing)
            if existing.state == "approved":
                return None
            if existing.state == "rejected" and not existing.consumed:
                self.consume_ticket(existing.id)
                return ToolResult(
                    status="error",
                    error_code="execution_failed",
                    retry_eligible=False,
                    data={
                        "reason": "approval_rejected",
                        "ticket_id": existing.id,
                        "note": existing.decision_note,
                    },
                )
            # a consumed rejection no longer gates; a fresh ticket is opened
        ticket = ApprovalTicket(
            id=f"apt-{intent.task_id}-{len(self.storage.list_tickets_for(intent.task_id)) + 1}",
            task_id=intent.task_id,
            intent=intent,
            intent_key=key,
            risk=risk,
            rationale=f"{intent.tool} assessed {risk.value}; approval required at "
            f"{self.config.approval_threshold.value} and above",
            state="pending",
            created_at=self.clock(),
        )
        self.storage.put_ticket(ticket.to_dict())
        self.storage.append_event(
            intent.task_id,
            "gateway.approval.created",
            {"ticket_id": ticket.id, "tool": intent.tool, "risk": risk.value},
            self.clock(),
        )
        self.after_commit(f"approval_created:{ticket.id}")
        return _held_result(ticket)

    def _ticket_for_key(self, task_id: str, key: str) -> ApprovalTicket | None:
        candidates = [
            ApprovalTicket.from_dict(t)
            for t in self.storage.list_tickets_for(task_id)
            if t.get("intent_key") == key
        ]
        if not candidates:
            return None
        return sorted(candidates, key=lambda t: t.created_at)[-1]

    def _execute(
        self, spec: ToolSpec, intent: ToolIntent, runtime: RuntimeContext, key: str
    ) -> ToolResult:
        try:
            data = self.catalog._raw_invoke(
                self.storage, intent.tool, intent.payload, intent.task_id
            )
        except ToolError as exc:
            extra = dict(exc.data)
            extra["message"] = exc.message
            retry = exc.retry_eligible
            if exc.code == "idempotency_conflict":
                retry = True
                extra["backoff_seconds"] = self._backoff_hint(key)
            ambiguity = tuple(str(c) for c in extra.get("candidates", ()))
            return ToolResult(
                status="error",
                error_code=exc.code,
                retry_eligible=retry,
                data=extra,
                ambiguity=ambiguity,
                confidence=0.5 if ambiguity else 1.0,
            )
        refs = _evidence_refs(data)
        result = ToolResult(status="ok", data=data, evidence_refs=refs)
        self.storage.idempotency_put_if_absent(key, result.to_dict())
        ticket = self._ticket_for_key(intent.task_id, key)
        if ticket is not None and ticket.state == "approved" and not ticket.consumed:
            self.consume_ticket(ticket.id)
        return result

    def _emit_execution(
        self, intent: ToolIntent, key: str, risk: RiskLevel, result: ToolResult, memoized: bool
    ) -> None:
        spec = self.catalog.spec(intent.tool)
        fingerprint = "" if spec is None else payload_fingerprint(spec, intent.payload)
        self.storage.append_event(
            intent.task_id,
            "gateway.intent.executed",
            {
                "tool": intent.tool,
                "role": intent.role.value,
                "key": key,
                "fingerprint": fingerprint,
                "risk": risk.value,
                "memoized": memoized,
                "result": result.to_dict(),
            },
            self.clock(),
        )

    def _backoff_hint(self, key: str) -> float:
        attempt = min(self._conflict_attempts.get(key, 0), self.config.backoff_max_attempts)
        self._conflict_attempts[key] = attempt + 1
        return self.config.backoff_base_seconds * (2**attempt)


def _in_scope(boundary: str, value: object, scope) -> bool:
    if boundary == "tenant":
        return value == scope.tenant_id
    if boundary == "brand":
        return value in scope.brand_ids
    if boundary == "location":
        return not scope.location_ids or value in scope.location_ids
    return False


def _allowed_values(boundary: str, scope) -> list:
    if boundary == "tenant":
        return [scope.tenant_id]
    if boundary == "brand":
        return sorted(scope.brand_ids)
    if boundary == "location":
        return sorted(scope.location_ids)
    return []


def _layer_error(
    code: str,
    layer: str,
    message: str,
    data: Mapping[str, object] | None = None,
    retry_eligible: bool = False,
) -> ToolResult:
    body = {"layer": layer, "message": message}
    body.update(data or {})
    return ToolResult(
        status="error", error_code=code, retry_eligible=retry_eligible, data=body
    )


def _held_result(ticket: ApprovalTicket) -> ToolResult:
    return ToolResult(
        status="held_for_approval",
        data={"ticket_id": ticket.id, "risk": ticket.risk.value, "state": ticket.state},
        next_step_suggestions=("await an approval decision, then resume the task",),
    )


def _evidence_refs(data: Mapping[str, object]) -> tuple[str, ...]:
    refs: list[str] = []
    if "object_id" in data:
        refs.append(str(data["object_id"]))
    for item in data.get("object_ids", []) or []:
        refs.append(str(item))
    return tuple(dict.fromkeys(refs))


def _last_block_opinion(cp) -> dict | None:
    for opinion in reversed(cp.opinions):
        if opinion.role == RoleName.ORCHESTRATOR and opinion.payload.get("kind") == "block":
            return dict(opinion.payload)
    return None
