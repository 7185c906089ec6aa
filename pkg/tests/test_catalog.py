"""Tool specs, payload canonicalization, and the built-in handlers."""

from __future__ import annotations

import pytest

from govtier.catalog import (
    RiskLevel,
    ToolError,
    build_catalog,
    canonical_payload,
    payload_fingerprint,
    validate_payload,
)
from govtier.gateway import idempotency_key
from govtier.store import MemoryStorage

CATALOG = build_catalog()
UPDATE = CATALOG.spec("object.update")
READ = CATALOG.spec("object.read")


def test_shipped_manifest_binds_all_five_tools():
    assert CATALOG.names() == sorted(
        ["object.read", "object.search", "object.update",
         "object.batch_update", "object.delete"]
    )


def test_risk_levels_are_ordered():
    assert RiskLevel.LOW.rank < RiskLevel.MEDIUM.rank < RiskLevel.HIGH.rank


def test_validate_flags_missing_required_params():
    problems = validate_payload(UPDATE, {"tenant_id": "t", "brand_id": "b"})
    assert any("object_id" in p for p in problems)
    assert any("fields" in p for p in problems)


def test_validate_flags_unknown_and_mistyped_params():
    payload = {"tenant_id": "t", "brand_id": "b", "object_id": "o",
               "fields": {}, "bogus": 1}
    assert any("bogus" in p for p in validate_payload(UPDATE, payload))
    payload = {"tenant_id": "t", "brand_id": "b", "object_id": 5, "fields": {}}
    assert any("object_id" in p for p in validate_payload(UPDATE, payload))


def test_validate_rejects_bool_for_integer_params():
    payload = {"tenant_id": "t", "brand_id": "b", "object_id": "o",
               "fields": {}, "expected_version": True}
    assert any("expected_version" in p for p in validate_payload(UPDATE, payload))


def test_clean_payload_validates():
    payload = {"tenant_id": "t", "brand_id": "b", "object_id": "o",
               "fields": {"status": "x"}, "expected_version": 2}
    assert validate_payload(UPDATE, payload) == []


def test_canonical_payload_drops_semantic_text():
    payload = {"tenant_id": "t", "brand_id": "b", "object_id": "o",
               "fields": {"status": "x"}, "note": "free text"}
    canonical = canonical_payload(UPDATE, payload)
    assert "note" not in canonical
    assert canonical["fields"] == {"status": "x"}


def test_fingerprint_invariant_under_key_order_and_notes():
    a = {"tenant_id": "t", "brand_id": "b", "object_id": "o", "fields": {"s": 1}}
    b = {"fields": {"s": 1}, "object_id": "o", "brand_id": "b", "tenant_id": "t",
         "note": "same thing, different words"}
    assert payload_fingerprint(UPDATE, a) == payload_fingerprint(UPDATE, b)


def test_fingerprint_changes_with_version_field():
    base = {"tenant_id": "t", "brand_id": "b", "object_id": "o", "fields": {"s": 1}}
    refreshed = dict(base, expected_version=4)
    assert payload_fingerprint(UPDATE, base) != payload_fingerprint(UPDATE, refreshed)


def test_fingerprint_is_tool_qualified():
    payload = {"tenant_id": "t", "brand_id": "b", "object_id": "o"}
    assert payload_fingerprint(READ, payload) != payload_fingerprint(
        CATALOG.spec("object.delete"), payload
    )


def test_idempotency_key_is_task_scoped():
    canonical = {"object_id": "o"}
    assert idempotency_key("task-1", "object.update", canonical) != idempotency_key(
        "task-2", "object.update", canonical
    )
    assert idempotency_key("task-1", "object.update", canonical) == idempotency_key(
        "task-1", "object.update", dict(canonical)
    )


def make_storage():
    storage = MemoryStorage()
    storage.put_object({"id": "o1", "data": {"tenant_id": "t", "brand_id": "b",
                                             "status": "draft"}})
    return storage


def test_read_handler_returns_record():
    storage = make_storage()
    result = CATALOG._raw_invoke(
        storage, "object.read",
        {"tenant_id": "t", "brand_id": "b", "object_id": "o1"}, "t1",
    )
    assert result["ok"] is True
    assert result["object"]["status"] == "draft"


def test_update_handler_bumps_version():
    storage = make_storage()
    payload = {"tenant_id": "t", "brand_id": "b", "object_id": "o1",
               "fields": {"status": "synced"}}
    result = CATALOG._raw_invoke(storage, "object.update", payload, "t1")
    assert result["ok"] and result["version"] == 2
    assert storage.get_object("o1")["data"]["status"] == "synced"


def test_update_handler_enforces_expected_version():
    storage = make_storage()
    payload = {"tenant_id": "t", "brand_id": "b", "object_id": "o1",
               "fields": {"status": "synced"}, "expected_version": 9}
    with pytest.raises(ToolError) as err:
        CATALOG._raw_invoke(storage, "object.update", payload, "t1")
    assert err.value.code == "idempotency_conflict"
    assert err.value.retry_eligible


def test_handlers_check_stored_tenant_and_brand():
    storage = make_storage()
    payload = {"tenant_id": "other", "brand_id": "b", "object_id": "o1",
               "fields": {"status": "x"}}
    with pytest.raises(ToolError):
        CATALOG._raw_invoke(storage, "object.update", payload, "t1")


def test_delete_handler_removes_record():
    storage = make_storage()
    result = CATALOG._raw_invoke(
        storage, "object.delete",
        {"tenant_id": "t", "brand_id": "b", "object_id": "o1"}, "t1",
    )
    assert result["ok"] and result["deleted"]
    assert storage.get_object("o1") is None


def test_batch_handler_counts_affected_objects():
    storage = make_storage()
    storage.put_object({"id": "o2", "data": {"tenant_id": "t", "brand_id": "b",
                                             "status": "draft"}})
    payload = {"tenant_id": "t", "brand_id": "b", "object_ids": ["o1", "o2"],
               "fields": {"status": "synced"}}
    result = CATALOG._raw_invoke(storage, "object.batch_update", payload, "t1")
    assert result["ok"] and result["affected_count"] == 2


def test_injected_transient_fault_fires_once():
    storage = make_storage()
    catalog = build_catalog()
    catalog.inject_fault("t1", "object.read", "transient_error", times=1)
    payload = {"tenant_id": "t", "brand_id": "b", "object_id": "o1"}
    with pytest.raises(ToolError) as err:
        catalog._raw_invoke(storage, "object.read", payload, "t1")
    assert err.value.retry_eligible
    assert catalog._raw_invoke(storage, "object.read", payload, "t1")["ok"]


def test_preview_never_consumes_faults_or_counters():
    storage = make_storage()
    catalog = build_catalog()
    catalog.inject_fault("t1", "object.read", "transient_error", times=1)
    payload = {"tenant_id": "t", "brand_id": "b", "object_id": "o1"}
    assert catalog._raw_invoke(storage, "object.read", payload, "t1", preview=True)["ok"]
    assert catalog.total_executions == 0
    # the armed fault is still there for the first real call
    with pytest.raises(ToolError):
        catalog._raw_invoke(storage, "object.read", payload, "t1")
