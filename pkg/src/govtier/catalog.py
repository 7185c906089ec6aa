"""Tool catalog: declared tool surfaces and their execution handlers.

Every tool is described by a spec (schema, permissions, scope fields,
semantic fields, base risk) loaded from a JSON manifest, and bound to a
handler at registration time.  The only way to reach a handler is
``ToolCatalog._raw_invoke``, which the access gateway calls after its
checks pass; nothing else should touch it, and an architectural test
enforces that.
"""

from __future__ import annotations

import enum
import importlib.resources
import json
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, replace

from .model import OpKind, canonical_json, check_fields
from .store import Storage, VersionConflict


class RiskLevel(str, enum.Enum):
    """Coarse risk level attached to a tool invocation."""

    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def rank(self) -> int:
        return _RISK_RANK[self]


_RISK_RANK = {RiskLevel.LOW: 0, RiskLevel.MEDIUM: 1, RiskLevel.HIGH: 2}

# Payload value types the schema layer understands.
_PARAM_TYPES = {"string", "integer", "number", "boolean", "array", "object"}


class ToolError(Exception):
    """Raised by handlers; the gateway maps it onto an error result."""

    def __init__(
        self,
        code: str,
        message: str,
        *,
        retry_eligible: bool = False,
        data: Mapping[str, object] | None = None,
    ) -> None:
        super().__init__(message)
        self.code = code
        self.message = message
        self.retry_eligible = retry_eligible
        self.data = dict(data or {})


@dataclass(frozen=True, slots=True)
class ToolSpec:
    """Declared contract of a single tool."""

    name: str
    params: Mapping[str, Mapping[str, object]]
    op_kind: OpKind
    required_permissions: frozenset[str]
    scope_fields: Mapping[str, str]
    semantic_fields: frozenset[str]
    base_risk: RiskLevel
    supports_dry_run: bool

    def __post_init__(self) -> None:
        for name, rule in self.params.items():
            kind = rule.get("type")
            if kind not in _PARAM_TYPES:
                raise ValueError(f"tool {self.name}: param {name} has unknown type {kind!r}")
        for name in self.scope_fields:
            if name not in self.params:
                raise ValueError(f"tool {self.name}: scope field {name} not in params")
        for name in self.semantic_fields:
            if name not in self.params:
                raise ValueError(f"tool {self.name}: semantic field {name} not in params")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": {k: dict(v) for k, v in sorted(self.params.items())},
            "op_kind": self.op_kind.value,
            "required_permissions": sorted(self.required_permissions),
            "scope_fields": dict(sorted(self.scope_fields.items())),
            "semantic_fields": sorted(self.semantic_fields),
            "base_risk": self.base_risk.value,
            "supports_dry_run": self.supports_dry_run,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, object]) -> "ToolSpec":
        check_fields(
            record,
            "ToolSpec",
            required=(
                "name",
                "params",
                "op_kind",
                "required_permissions",
                "scope_fields",
                "semantic_fields",
                "base_risk",
                "supports_dry_run",
            ),
        )
        return cls(
            name=str(record["name"]),
            params={str(k): dict(v) for k, v in dict(record["params"]).items()},
            op_kind=OpKind(record["op_kind"]),
            required_permissions=frozenset(record["required_permissions"]),
            scope_fields={str(k): str(v) for k, v in dict(record["scope_fields"]).items()},
            semantic_fields=frozenset(record["semantic_fields"]),
            base_risk=RiskLevel(record["base_risk"]),
            supports_dry_run=bool(record["supports_dry_run"]),
        )


def validate_payload(spec: ToolSpec, payload: Mapping[str, object]) -> list[str]:
    """Return schema problems for a payload; empty means valid."""
    problems: list[str] = []
    if not isinstance(payload, Mapping):
        return [f"payload must be an object, got {type(payload).__name__}"]
    for name, rule in spec.params.items():
        if rule.get("required") and name not in payload:
            problems.append(f"missing required param {name}")
    for name, value in payload.items():
        rule = spec.params.get(name)
        if rule is None:
            problems.append(f"unknown param {name}")
            continue
        if not _type_ok(str(rule.get("type")), value):
            problems.append(f"param {name} must be {rule.get('type')}")
    return problems


def _type_ok(kind: str, value: object) -> bool:
    if kind == "string":
        return isinstance(value, str)
    if kind == "boolean":
        return isinstance(value, bool)
    # bool is an int subclass; reject it for numeric params
    if kind == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == "array":
        return isinstance(value, list)
    if kind == "object":
        return isinstance(value, Mapping)
    return False


def canonical_payload(spec: ToolSpec, payload: Mapping[str, object]) -> dict:
    """Payload reduced to its semantic-neutral form for keying.

    Free-text fields declared semantic on the spec are dropped so that
    rephrasing a note never changes identity; key order is normalized by
    the canonical JSON encoding at hash time.
    """
    return {k: v for k, v in payload.items() if k not in spec.semantic_fields}


def payload_fingerprint(spec: ToolSpec, payload: Mapping[str, object]) -> str:
    """Task-independent identity of (tool, canonical payload)."""
    import hashlib

    body = canonical_json({"tool": spec.name, "payload": canonical_payload(spec, payload)})
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


@dataclass(slots=True)
class InvokeContext:
    """What a handler may see: storage plus the active fault, if any."""

    storage: Storage
    task_id: str
    preview: bool
    fault: dict | None = None


Handler = Callable[[Mapping[str, object], InvokeContext], dict]


@dataclass(slots=True)
class _FaultEntry:
    kind: str
    times: int
    details: dict = field(default_factory=dict)


class ToolCatalog:
    """Registry of tool specs, handlers, fault scripts, and counters."""

    def __init__(self) -> None:
        self._specs: dict[str, ToolSpec] = {}
        self._handlers: dict[str, Handler] = {}
        self._faults: dict[tuple[str, str], list[_FaultEntry]] = {}
        self.execution_counts: dict[str, int] = {}

    def register(self, spec: ToolSpec, handler: Handler) -> None:
        if spec.name in self._specs:
            raise ValueError(f"tool {spec.name} already registered")
        self._specs[spec.name] = spec
        self._handlers[spec.name] = handler

    def spec(self, name: str) -> ToolSpec | None:
        return self._specs.get(name)

    def names(self) -> list[str]:
        return sorted(self._specs)

    def specs(self) -> list[ToolSpec]:
        return [self._specs[n] for n in self.names()]

    def inject_fault(
        self, task_id: str, tool: str, kind: str, *, times: int = 1, **details: object
    ) -> None:
        """Arm a scripted fault for the next `times` real invocations."""
        entry = _FaultEntry(kind=kind, times=times, details=dict(details))
        self._faults.setdefault((task_id, tool), []).append(entry)

    def _consume_fault(self, task_id: str, tool: str) -> _FaultEntry | None:
        queue = self._faults.get((task_id, tool))
        if not queue:
            return None
        entry = queue[0]
        entry.times -= 1
        if entry.times <= 0:
            queue.pop(0)
        return entry

    def _raw_invoke(
        self,
        storage: Storage,
        name: str,
        payload: Mapping[str, object],
        task_id: str,
        *,
        preview: bool = False,
    ) -> dict:
        """Run the handler.  Gateway-only entry point; callers elsewhere
        bypass schema, permission, scope, risk, and idempotency checks
        and are treated as a defect."""
        handler = self._handlers.get(name)
        if handler is None:
            raise ToolError("schema_invalid", f"unknown tool {name}")
        ctx = InvokeContext(storage=storage, task_id=task_id, preview=preview)
        if not preview:
            fault = self._consume_fault(task_id, name)
            if fault is not None:
                if fault.kind == "transient_error":
                    raise ToolError(
                        "execution_failed",
                        f"transient backend error in {name}",
                        retry_eligible=True,
                        data={"reason": "transient", **fault.details},
                    )
                if fault.kind == "hard_error":
                    raise ToolError(
                        "execution_failed",
                        f"backend rejected {name}",
                        retry_eligible=False,
                        data={"reason": "hard_error", **fault.details},
                    )
                if fault.kind == "ambiguous":
                    raise ToolError(
                        "ambiguous_query",
                        "query matched multiple plausible targets",
                        retry_eligible=False,
                        data={"candidates": list(fault.details.get("candidates", []))},
                    )
                # remaining kinds (e.g. short_batch) are applied inside handlers
                ctx.fault = {"kind": fault.kind, **fault.details}
            self.execution_counts[name] = self.execution_counts.get(name, 0) + 1
        return handler(payload, ctx)

    @property
    def total_executions(self) -> int:
        return sum(self.execution_counts.values())


# --- built-in object-store tools ------------------------------------------


def _require_object(ctx: InvokeContext, payload: Mapping[str, object]) -> tuple[str, dict]:
    object_id = str(payload["object_id"])
    record = ctx.storage.get_object(object_id)
    if record is None or record["data"].get("tenant_id") != payload.get("tenant_id"):
        raise ToolError(
            "execution_failed",
            f"object {object_id} not found",
            retry_eligible=False,
            data={"reason": "not_found", "object_id": object_id},
        )
    if record["data"].get("brand_id") != payload.get("brand_id"):
        raise ToolError(
            "execution_failed",
            f"object {object_id} not found",
            retry_eligible=False,
            data={"reason": "not_found", "object_id": object_id},
        )
    return object_id, record


def _read_handler(payload: Mapping[str, object], ctx: InvokeContext) -> dict:
    object_id, record = _require_object(ctx, payload)
    return {
        "ok": True,
        "found": True,
        "object_id": object_id,
        "version": record["version"],
        "object": record["data"],
    }


def _search_handler(payload: Mapping[str, object], ctx: InvokeContext) -> dict:
    query = str(payload.get("query", "")).lower()
    limit = int(payload.get("limit", 50))
    matches = []
    for record in sorted(ctx.storage.list_objects(), key=lambda r: r["id"]):
        object_id = record["id"]
        data = record["data"]
        if data.get("tenant_id") != payload.get("tenant_id"):
            continue
        if data.get("brand_id") != payload.get("brand_id"):
            continue
        haystack = " ".join(
            str(data.get(k, "")) for k in ("name", "tags", "kind")
        ).lower()
        if not query or query in haystack:
            matches.append(object_id)
        if len(matches) >= limit:
            break
    return {"ok": True, "matches": matches, "count": len(matches)}


def _update_handler(payload: Mapping[str, object], ctx: InvokeContext) -> dict:
    object_id, record = _require_object(ctx, payload)
    fields = dict(payload["fields"])
    if ctx.preview:
        return {
            "preview": True,
            "object_id": object_id,
            "current_version": record["version"],
            "would_update": fields,
            "would_affect": 1,
        }
    expected = payload.get("expected_version")
    try:
        new_record = ctx.storage.write_object(
            object_id, fields, expected_version=int(expected) if expected is not None else None
        )
    except VersionConflict as exc:
        raise ToolError(
            "idempotency_conflict",
            str(exc),
            retry_eligible=True,
            data={"object_id": object_id, "expected_version": expected},
        ) from exc
    return {
        "ok": True,
        "object_id": object_id,
        "version": new_record["version"],
        "object": new_record["data"],
        "affected_count": 1,
    }


def _batch_update_handler(payload: Mapping[str, object], ctx: InvokeContext) -> dict:
    object_ids = [str(x) for x in payload["object_ids"]]
    fields = dict(payload["fields"])
    existing = []
    missing = []
    for object_id in object_ids:
        record = ctx.storage.get_object(object_id)
        if (
            record is None
            or record["data"].get("tenant_id") != payload.get("tenant_id")
            or record["data"].get("brand_id") != payload.get("brand_id")
        ):
            missing.append(object_id)
        else:
            existing.append(object_id)
    if ctx.preview:
        return {
            "preview": True,
            "would_affect": len(existing),
            "object_ids": existing,
            "missing": missing,
        }
    to_apply = list(existing)
    if ctx.fault and ctx.fault.get("kind") == "short_batch":
        # defective backend applies only a prefix of the batch
        short = int(ctx.fault.get("short", 1))
        to_apply = to_apply[: max(0, len(to_apply) - short)]
    applied = []
    for object_id in to_apply:
        ctx.storage.write_object(object_id, fields)
        applied.append(object_id)
    return {
        "ok": True,
        "affected_count": len(applied),
        "object_ids": applied,
        "missing": missing,
    }


def _delete_handler(payload: Mapping[str, object], ctx: InvokeContext) -> dict:
    object_id, record = _require_object(ctx, payload)
    if ctx.preview:
        return {
            "preview": True,
            "object_id": object_id,
            "would_delete": True,
            "current_version": record["version"],
        }
    ctx.storage.delete_object(object_id)
    return {"ok": True, "deleted": True, "object_id": object_id, "affected_count": 1}


_BUILTIN_HANDLERS: dict[str, Handler] = {
    "object.read": _read_handler,
    "object.search": _search_handler,
    "object.update": _update_handler,
    "object.batch_update": _batch_update_handler,
    "object.delete": _delete_handler,
}


def load_manifest(path: str | None = None) -> list[ToolSpec]:
    """Read tool specs from a manifest file, defaulting to the shipped one."""
    if path is None:
        source = importlib.resources.files("govtier.data").joinpath("toolcatalog.json")
        raw = source.read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    records = json.loads(raw)
    return [ToolSpec.from_dict(record) for record in records["tools"]]


def build_catalog(manifest_path: str | None = None) -> ToolCatalog:
    """Catalog with the built-in object-store tools wired to their handlers."""
    catalog = ToolCatalog()
    for spec in load_manifest(manifest_path):
        handler = _BUILTIN_HANDLERS.get(spec.name)
        if handler is None:
            raise ValueError(f"manifest declares {spec.name} but no handler is bound")
        catalog.register(spec, handler)
    return catalog


def respecify(spec: ToolSpec, **changes: object) -> ToolSpec:
    """Copy of a spec with selected fields replaced; test helper."""
    return replace(spec, **changes)
