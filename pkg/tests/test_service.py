"""HTTP surface: auth, task lifecycle, approvals, overrides, event feed."""

from __future__ import annotations

import time

import pytest
from fastapi.testclient import TestClient

from govtier.config import default_config
from govtier.service import create_app


@pytest.fixture()
def client():
    app = create_app(default_config())
    with TestClient(app) as c:
        yield c


OP = {"Authorization": "Bearer operator-token"}
USER = {"Authorization": "Bearer user-token"}


def task_body(task_id, op_kind="read", estimate=1, objects=(), scenario=None):
    body = {
        "task": {
            "id": task_id,
            "goal": "service test",
            "op_kind": op_kind,
            "scope": {"tenant_id": "ten", "brand_ids": ["brand-a"],
                      "cross_domain": False},
            "affected_object_estimate": estimate,
        },
        "objects": [
            {"id": oid, "data": {"tenant_id": "ten", "brand_id": "brand-a",
                                 "status": "draft"}}
            for oid in objects
        ],
    }
    if scenario is not None:
        body["scenario"] = scenario
    return body


def read_scenario(*object_ids):
    return {"plans": [[{"tool": "object.read",
                        "payload": {"tenant_id": "ten", "brand_id": "brand-a",
                                    "object_id": oid}} for oid in object_ids]]}


def delete_scenario(object_id):
    return {"plans": [[{"tool": "object.delete",
                        "payload": {"tenant_id": "ten", "brand_id": "brand-a",
                                    "object_id": object_id}}]]}


def wait_for(client, task_id, test, headers=USER, tries=200):
    for _ in range(tries):
        view = client.get(f"/tasks/{task_id}", headers=headers).json()
        if test(view):
            return view
        time.sleep(0.02)
    raise AssertionError(f"task {task_id} never reached the wanted state: {view}")


def test_requests_without_token_are_unauthorized(client):
    response = client.get("/tasks")
    assert response.status_code == 401
    assert response.json()["code"] == "unauthorized"


def test_health_needs_no_token(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_session_reflects_token_identity(client):
    session = client.get("/session", headers=OP).json()
    assert session["user_id"] == "demo-operator"
    assert session["elevated"] is True
    assert client.get("/session", headers=USER).json()["elevated"] is False


def test_submit_poll_and_trace_round_trip(client):
    body = task_body("svc-read", objects=["o1"], scenario=read_scenario("o1"))
    response = client.post("/tasks", headers=USER, json=body)
    assert response.status_code == 202
    assert response.json()["task_id"] == "svc-read"
    view = wait_for(client, "svc-read", lambda v: v.get("terminal"))
    assert view["phase"] == "completed"
    assert view["tier"] == "light"
    trace = client.get("/tasks/svc-read/trace", headers=USER).json()
    assert trace["events"][0]["name"] == "runner.tier.selected"
    listing = client.get("/tasks", headers=USER).json()["tasks"]
    assert any(row["id"] == "svc-read" for row in listing)


def test_duplicate_submission_conflicts(client):
    body = task_body("svc-dup", objects=["o1"], scenario=read_scenario("o1"))
    assert client.post("/tasks", headers=USER, json=body).status_code == 202
    wait_for(client, "svc-dup", lambda v: v.get("terminal"))
    response = client.post("/tasks", headers=USER, json=body)
    assert response.status_code == 409
    assert response.json()["code"] == "task_exists"


def test_malformed_task_is_a_client_error(client):
    response = client.post("/tasks", headers=USER,
                           json={"task": {"id": "bad", "goal": "no kind"}})
    assert response.status_code == 400
    assert response.json()["code"] == "invalid_task"


def test_approval_flow_over_http(client):
    body = task_body("svc-del", op_kind="delete_irreversible", objects=["o-del"],
                     scenario=delete_scenario("o-del"))
    assert client.post("/tasks", headers=USER, json=body).status_code == 202
    wait_for(client, "svc-del", lambda v: v.get("phase") == "pending_approval")

    approvals = client.get("/approvals", headers=OP).json()["approvals"]
    ticket = next(t for t in approvals if t["task_id"] == "svc-del")

    denied = client.post(f"/approvals/{ticket['id']}/decision", headers=USER,
                         json={"decision": "approve"})
    assert denied.status_code == 403
    assert denied.json()["code"] == "missing_permission"

    decided = client.post(f"/approvals/{ticket['id']}/decision", headers=OP,
                          json={"decision": "approve", "note": "looks fine"})
    assert decided.status_code == 200
    assert decided.json()["outcome"]["terminal"] == "completed"

    again = client.post(f"/approvals/{ticket['id']}/decision", headers=OP,
                        json={"decision": "reject"})
    assert again.status_code == 409
    assert again.json()["code"] == "ticket_not_pending"


def test_rejection_note_reaches_the_trace(client):
    body = task_body("svc-rej", op_kind="delete_irreversible", objects=["o-rej"],
                     scenario=delete_scenario("o-rej"))
    client.post("/tasks", headers=USER, json=body)
    wait_for(client, "svc-rej", lambda v: v.get("phase") == "pending_approval")
    approvals = client.get("/approvals", headers=OP).json()["approvals"]
    ticket = next(t for t in approvals if t["task_id"] == "svc-rej")
    decided = client.post(f"/approvals/{ticket['id']}/decision", headers=OP,
                          json={"decision": "reject", "note": "not today"})
    assert decided.json()["outcome"]["terminal"] == "failed"


def test_invalid_decision_values_are_rejected(client):
    response = client.post("/approvals/whatever/decision", headers=OP,
                           json={"decision": "maybe"})
    assert response.status_code == 400
    assert response.json()["code"] == "invalid_decision"


def test_unknown_ids_are_not_found(client):
    assert client.get("/tasks/nope", headers=OP).status_code == 404
    assert client.get("/tasks/nope/trace", headers=OP).status_code == 404
    missing = client.post("/approvals/nope/decision", headers=OP,
                          json={"decision": "approve"})
    assert missing.status_code == 404
    assert missing.json()["code"] == "unknown_ticket"


def test_event_stream_pages_by_cursor(client):
    body = task_body("svc-feed", objects=["o1"], scenario=read_scenario("o1"))
    client.post("/tasks", headers=USER, json=body)
    wait_for(client, "svc-feed", lambda v: v.get("terminal"))
    feed = client.get("/events/stream", headers=USER,
                      params={"after": 0, "wait": 0.2}).json()
    assert feed["cursor"] > 0
    assert feed["events"][0]["name"] == "runner.tier.selected"
    drained = client.get("/events/stream", headers=USER,
                         params={"after": feed["cursor"], "wait": 0.1}).json()
    assert drained["events"] == []
    assert drained["cursor"] == feed["cursor"]


def test_override_requires_elevation_and_a_blocked_task(client):
    body = task_body("svc-ovr", objects=["o1"], scenario=read_scenario("o1"))
    client.post("/tasks", headers=USER, json=body)
    wait_for(client, "svc-ovr", lambda v: v.get("terminal"))
    plain = client.post("/tasks/svc-ovr/override", headers=USER,
                        json={"finding_ids": []})
    assert plain.status_code == 403
    assert plain.json()["code"] == "elevation_required"
    wrong_state = client.post("/tasks/svc-ovr/override", headers=OP,
                              json={"finding_ids": []})
    assert wrong_state.status_code == 409
    assert wrong_state.json()["code"] == "task_not_blocked"


def test_override_releases_a_reviewer_blocked_task(client):
    scenario = {
        "plans": [[{"tool": "object.update",
                    "payload": {"tenant_id": "ten", "brand_id": "brand-a",
                                "object_id": "o-blk",
                                "fields": {"status": "synced"}}}]],
        "critic": [{"verdict": "ask_user", "confidence": 0.9,
                    "notes": "is this the object you meant"}],
    }
    body = task_body("svc-blk", op_kind="single_write", objects=["o-blk"],
                     scenario=scenario)
    client.post("/tasks", headers=USER, json=body)
    wait_for(client, "svc-blk", lambda v: v.get("phase") == "blocked")
    released = client.post("/tasks/svc-blk/override", headers=OP,
                           json={"finding_ids": []})
    assert released.status_code == 200
    assert released.json()["outcome"]["terminal"] == "completed"


def test_approvals_listing_filters_by_state(client):
    bad = client.get("/approvals", headers=OP, params={"state": "sideways"})
    assert bad.status_code == 400
    assert bad.json()["code"] == "invalid_state"
    empty = client.get("/approvals", headers=OP, params={"state": "rejected"}).json()
    assert empty["approvals"] == []
