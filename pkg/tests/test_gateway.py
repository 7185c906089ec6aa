"""The six-layer checked execution path, approval holds, and memoization."""

from __future__ import annotations

import pytest

from govtier.catalog import RiskLevel, build_catalog
from govtier.gateway import (
    AuthorityError,
    Gateway,
    GatewayConfig,
    RuntimeContext,
    ToolIntent,
)
from govtier.model import OpKind, RoleName, ScopeDescriptor, Task, Tier
from govtier.store import MemoryStorage, StateConflict

PERMS = frozenset({"objects.read", "objects.write", "objects.delete"})
OPERATOR = PERMS | {"approvals.decide", "overrides.record"}


def make_task(task_id="t1", op_kind="single_write", brands=("brand-a",), cross=False):
    return Task(
        id=task_id,
        goal="gateway test",
        op_kind=OpKind(op_kind),
        scope=ScopeDescriptor(tenant_id="ten", brand_ids=tuple(brands), cross_domain=cross),
        affected_object_estimate=1,
    )


def make_gateway(config=None, storage=None):
    storage = storage or MemoryStorage()
    storage.put_object({"id": "o1", "data": {"tenant_id": "ten", "brand_id": "brand-a",
                                             "status": "draft"}})
    gateway = Gateway(storage, build_catalog(), config=config or GatewayConfig())
    return gateway, storage


def runtime(task, permissions=PERMS, tier=Tier.STANDARD):
    return RuntimeContext(task=task, tier=tier, user_id="u1", permissions=permissions)


def intent(task, tool="object.update", payload=None, dry_run=False):
    payload = payload if payload is not None else {
        "tenant_id": "ten", "brand_id": "brand-a", "object_id": "o1",
        "fields": {"status": "synced"},
    }
    return ToolIntent(tool=tool, payload=payload, role=RoleName.WORKER,
                      task_id=task.id, dry_run=dry_run)


def test_layer1_schema_rejects_malformed_payload():
    gateway, storage = make_gateway()
    task = make_task()
    result = gateway.execute_intent(
        intent(task, payload={"tenant_id": "ten", "brand_id": "brand-a"}), runtime(task)
    )
    assert result.status == "error" and result.error_code == "schema_invalid"
    assert result.data["layer"] == "schema"
    assert storage.get_object("o1")["data"]["status"] == "draft"


def test_layer1_schema_rejects_unknown_tool():
    gateway, _ = make_gateway()
    task = make_task()
    result = gateway.execute_intent(
        intent(task, tool="object.exfiltrate", payload={}), runtime(task)
    )
    assert result.error_code == "schema_invalid"


def test_layer2_permission_denied_without_write_grant():
    gateway, storage = make_gateway()
    task = make_task()
    result = gateway.execute_intent(
        intent(task), runtime(task, permissions=frozenset({"objects.read"}))
    )
    assert result.error_code == "permission_denied"
    assert result.data["layer"] == "permission"
    assert storage.get_object("o1")["data"]["status"] == "draft"


def test_layer3_scope_blocks_cross_tenant():
    gateway, storage = make_gateway()
    task = make_task()
    payload = {"tenant_id": "other", "brand_id": "brand-a", "object_id": "o1",
               "fields": {"status": "stolen"}}
    result = gateway.execute_intent(intent(task, payload=payload), runtime(task))
    assert result.error_code == "scope_violation"
    assert result.data["layer"] == "scope"
    assert result.data["boundary"] == "tenant"
    assert storage.get_object("o1")["data"]["status"] == "draft"


def test_layer3_scope_blocks_cross_brand():
    gateway, _ = make_gateway()
    task = make_task()
    payload = {"tenant_id": "ten", "brand_id": "brand-z", "object_id": "o1",
               "fields": {"status": "x"}}
    result = gateway.execute_intent(intent(task, payload=payload), runtime(task))
    assert result.error_code == "scope_violation"
    assert result.data["boundary"] == "brand"


def test_layer_order_schema_before_permission_before_scope():
    gateway, _ = make_gateway()
    task = make_task()
    # malformed AND unauthorized AND out of scope: schema wins
    result = gateway.execute_intent(
        intent(task, payload={"tenant_id": "other"}),
        runtime(task, permissions=frozenset()),
    )
    assert result.data["layer"] == "schema"
    # well-formed but unauthorized and out of scope: permission wins
    payload = {"tenant_id": "other", "brand_id": "brand-a", "object_id": "o1",
               "fields": {}}
    result = gateway.execute_intent(
        intent(task, payload=payload), runtime(task, permissions=frozenset())
    )
    assert result.data["layer"] == "permission"


def test_layer4_delete_is_high_risk_and_held():
    gateway, storage = make_gateway()
    task = make_task(op_kind="delete_irreversible")
    payload = {"tenant_id": "ten", "brand_id": "brand-a", "object_id": "o1"}
    result = gateway.execute_intent(
        intent(task, tool="object.delete", payload=payload), runtime(task)
    )
    assert result.status == "held_for_approval"
    assert result.data["risk"] == "high"
    tickets = gateway.pending_tickets(task.id)
    assert len(tickets) == 1
    assert storage.get_object("o1") is not None


def test_layer4_large_batches_escalate_to_medium():
    gateway, _ = make_gateway()
    spec = build_catalog().spec("object.batch_update")
    small = {"object_ids": [f"o{i}" for i in range(10)], "fields": {}}
    large = {"object_ids": [f"o{i}" for i in range(11)], "fields": {}}
    assert gateway.assess_risk(spec, small) is RiskLevel.LOW
    assert gateway.assess_risk(spec, large) is RiskLevel.MEDIUM


def test_layer4_disabled_records_risk_but_never_holds():
    gateway, storage = make_gateway(config=GatewayConfig(risk_layer_enabled=False))
    task = make_task(op_kind="delete_irreversible")
    payload = {"tenant_id": "ten", "brand_id": "brand-a", "object_id": "o1"}
    result = gateway.execute_intent(
        intent(task, tool="object.delete", payload=payload), runtime(task)
    )
    assert result.ok
    assert gateway.pending_tickets(task.id) == []
    executed = [e for e in storage.events(task.id) if e.name == "gateway.intent.executed"]
    assert executed and executed[0].payload["risk"] == "high"
    assert storage.get_object("o1") is None


def test_approved_ticket_releases_exactly_one_execution():
    gateway, storage = make_gateway()
    task = make_task(op_kind="delete_irreversible")
    payload = {"tenant_id": "ten", "brand_id": "brand-a", "object_id": "o1"}
    held = gateway.execute_intent(
        intent(task, tool="object.delete", payload=payload), runtime(task)
    )
    ticket_id = held.data["ticket_id"]
    gateway.decide_approval(ticket_id, True, "op-1", OPERATOR)
    result = gateway.execute_intent(
        intent(task, tool="object.delete", payload=payload), runtime(task)
    )
    assert result.ok and result.data["deleted"]
    assert gateway.ticket(ticket_id).consumed


def test_rejected_ticket_maps_to_execution_failed():
    gateway, storage = make_gateway()
    task = make_task(op_kind="delete_irreversible")
    payload = {"tenant_id": "ten", "brand_id": "brand-a", "object_id": "o1"}
    held = gateway.execute_intent(
        intent(task, tool="object.delete", payload=payload), runtime(task)
    )
    gateway.decide_approval(held.data["ticket_id"], False, "op-1", OPERATOR)
    result = gateway.execute_intent(
        intent(task, tool="object.delete", payload=payload), runtime(task)
    )
    assert result.status == "error"
    assert result.error_code == "execution_failed"
    assert result.data["reason"] == "approval_rejected"
    assert not result.retry_eligible
    assert storage.get_object("o1") is not None


def test_double_decision_conflicts():
    gateway, _ = make_gateway()
    task = make_task(op_kind="delete_irreversible")
    payload = {"tenant_id": "ten", "brand_id": "brand-a", "object_id": "o1"}
    held = gateway.execute_intent(
        intent(task, tool="object.delete", payload=payload), runtime(task)
    )
    gateway.decide_approval(held.data["ticket_id"], True, "op-1", OPERATOR)
    with pytest.raises(StateConflict):
        gateway.decide_approval(held.data["ticket_id"], False, "op-2", OPERATOR)


def test_decision_requires_approval_authority():
    gateway, _ = make_gateway()
    task = make_task(op_kind="delete_irreversible")
    payload = {"tenant_id": "ten", "brand_id": "brand-a", "object_id": "o1"}
    held = gateway.execute_intent(
        intent(task, tool="object.delete", payload=payload), runtime(task)
    )
    with pytest.raises(AuthorityError):
        gateway.decide_approval(held.data["ticket_id"], True, "mallory", PERMS)


def test_layer5_memoizes_successful_writes():
    gateway, storage = make_gateway()
    task = make_task()
    first = gateway.execute_intent(intent(task), runtime(task))
    second = gateway.execute_intent(intent(task), runtime(task))
    third = gateway.execute_intent(intent(task), runtime(task))
    assert first.ok
    assert second.to_dict() == first.to_dict()
    assert third.to_dict() == first.to_dict()
    # the version only moved once: one real execution
    assert storage.get_object("o1")["version"] == 2
    executed = [e for e in storage.events(task.id) if e.name == "gateway.intent.executed"]
    assert [e.payload["memoized"] for e in executed] == [False, True, True]


def test_layer5_never_memoizes_errors():
    gateway, storage = make_gateway()
    task = make_task()
    gateway.catalog.inject_fault(task.id, "object.update", "transient_error", times=1)
    first = gateway.execute_intent(intent(task), runtime(task))
    assert first.status == "error" and first.retry_eligible
    second = gateway.execute_intent(intent(task), runtime(task))
    assert second.ok
    assert storage.get_object("o1")["version"] == 2


def test_layer5_same_payload_different_tasks_execute_separately():
    gateway, storage = make_gateway()
    t1, t2 = make_task("ta"), make_task("tb")
    r1 = gateway.execute_intent(intent(t1), runtime(t1))
    r2 = gateway.execute_intent(intent(t2), runtime(t2))
    assert r1.ok and r2.ok
    assert storage.get_object("o1")["version"] == 3


def test_executed_events_carry_task_independent_fingerprint():
    gateway, storage = make_gateway()
    t1, t2 = make_task("ta"), make_task("tb")
    gateway.execute_intent(intent(t1), runtime(t1))
    gateway.execute_intent(intent(t2), runtime(t2))
    f1 = [e for e in storage.events("ta") if e.name == "gateway.intent.executed"][0]
    f2 = [e for e in storage.events("tb") if e.name == "gateway.intent.executed"][0]
    assert f1.payload["fingerprint"] == f2.payload["fingerprint"]
    assert f1.payload["key"] != f2.payload["key"]


def test_dry_run_previews_without_side_effects():
    gateway, storage = make_gateway()
    task = make_task(op_kind="delete_irreversible")
    payload = {"tenant_id": "ten", "brand_id": "brand-a", "object_id": "o1"}
    result = gateway.execute_intent(
        intent(task, tool="object.delete", payload=payload, dry_run=True), runtime(task)
    )
    assert result.ok
    assert result.data["dry_run"] is True
    assert result.data["risk"] == "high"
    assert result.data["would_require_approval"] is True
    assert storage.get_object("o1") is not None
    assert gateway.pending_tickets(task.id) == []
    assert storage.events(task.id) == []


def test_dry_run_still_enforces_static_layers():
    gateway, _ = make_gateway()
    task = make_task()
    payload = {"tenant_id": "other", "brand_id": "brand-a", "object_id": "o1",
               "fields": {}}
    result = gateway.execute_intent(
        intent(task, payload=payload, dry_run=True), runtime(task)
    )
    assert result.error_code == "scope_violation"
