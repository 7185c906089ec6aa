"""Persistence contracts: CAS checkpoints, gapless events, durable reload."""

from __future__ import annotations

import pytest

from govtier.model import Checkpoint, OpKind, Phase, RoleName, ScopeDescriptor, Task, Tier
from govtier.store import (
    FileStorage,
    MemoryStorage,
    ReplayDivergence,
    StateConflict,
    VersionConflict,
    fold_events,
    replay,
)


def make_task(task_id="t1"):
    return Task(id=task_id, goal="g", op_kind=OpKind.READ,
                scope=ScopeDescriptor(tenant_id="ten", brand_ids=("b",), cross_domain=False))


def make_cp(task_id="t1", version=1, phase=Phase.PLANNING):
    return Checkpoint(task_id=task_id, tier=Tier.LIGHT, phase=phase,
                      active_roles=(RoleName.ORCHESTRATOR,), version=version)


def test_checkpoint_cas_accepts_only_next_version():
    storage = MemoryStorage()
    storage.persist_checkpoint(make_cp(version=1))
    storage.persist_checkpoint(make_cp(version=2))
    with pytest.raises(VersionConflict):
        storage.persist_checkpoint(make_cp(version=2))
    with pytest.raises(VersionConflict):
        storage.persist_checkpoint(make_cp(version=5))


def test_first_checkpoint_must_be_version_one():
    storage = MemoryStorage()
    with pytest.raises(VersionConflict):
        storage.persist_checkpoint(make_cp(version=3))


def test_event_seq_is_gapless_per_task():
    storage = MemoryStorage()
    for name in ("runner.tier.selected", "runner.phase.changed", "runner.completed"):
        storage.append_event("t1", name, {}, timestamp=1.0)
    storage.append_event("t2", "runner.tier.selected", {}, timestamp=1.0)
    assert [e.seq for e in storage.events("t1")] == [1, 2, 3]
    assert [e.seq for e in storage.events("t2")] == [1]


def test_feed_cursor_is_incremental():
    storage = MemoryStorage()
    storage.append_event("t1", "runner.tier.selected", {}, 1.0)
    storage.append_event("t2", "runner.tier.selected", {}, 1.0)
    cursor, events = storage.feed(0)
    assert cursor == 2 and len(events) == 2
    storage.append_event("t1", "runner.completed", {}, 2.0)
    cursor2, events2 = storage.feed(cursor)
    assert cursor2 == 3
    assert [e.name for e in events2] == ["runner.completed"]
    cursor3, events3 = storage.feed(cursor2)
    assert cursor3 == cursor2 and events3 == []


def test_idempotency_put_if_absent_returns_winner():
    storage = MemoryStorage()
    first = storage.idempotency_put_if_absent("k", {"status": "ok", "data": {"n": 1}})
    second = storage.idempotency_put_if_absent("k", {"status": "ok", "data": {"n": 2}})
    assert first["data"]["n"] == 1
    assert second["data"]["n"] == 1
    assert storage.idempotency_get("k")["data"]["n"] == 1


def test_object_write_optimistic_version_check():
    storage = MemoryStorage()
    storage.put_object({"id": "o1", "data": {"status": "a"}})
    updated = storage.write_object("o1", {"status": "b"}, expected_version=1)
    assert updated["version"] == 2
    with pytest.raises(VersionConflict):
        storage.write_object("o1", {"status": "c"}, expected_version=1)


def test_ticket_decide_is_single_shot():
    storage = MemoryStorage()
    storage.put_ticket({"id": "apt-1", "task_id": "t1", "state": "pending",
                        "intent": {}, "intent_key": "k", "risk": "high",
                        "created_at": 0.0, "consumed": False})
    decided = storage.decide_ticket("apt-1", state="approved", decided_by="op",
                                    decided_at=1.0, note="")
    assert decided["state"] == "approved"
    with pytest.raises(StateConflict):
        storage.decide_ticket("apt-1", state="rejected", decided_by="op",
                              decided_at=2.0, note="")


def test_lease_excludes_second_owner_until_expiry():
    storage = MemoryStorage()
    assert storage.acquire_lease("t1", "runner-a", now=0.0, ttl=10.0)
    assert not storage.acquire_lease("t1", "runner-b", now=5.0, ttl=10.0)
    assert storage.acquire_lease("t1", "runner-a", now=5.0, ttl=10.0)
    # the refresh at t=5 pushed expiry to t=15, so takeover works after that
    assert storage.acquire_lease("t1", "runner-b", now=16.0, ttl=10.0)


def test_file_storage_reloads_everything(tmp_path):
    root = tmp_path / "store"
    storage = FileStorage(root)
    storage.put_task(make_task())
    storage.persist_checkpoint(make_cp(version=1))
    storage.append_event("t1", "runner.tier.selected", {"tier": "light"}, 1.0)
    storage.append_event("t1", "runner.completed", {"result": {}}, 2.0)
    storage.put_object({"id": "o1", "data": {"status": "a"}})
    storage.put_ticket({"id": "apt-1", "task_id": "t1", "state": "pending",
                        "intent": {}, "intent_key": "k", "risk": "high",
                        "created_at": 0.0, "consumed": False})
    storage.idempotency_put_if_absent("k", {"status": "ok", "data": {}})

    revived = FileStorage(root)
    assert revived.get_task("t1") == make_task()
    assert revived.load_checkpoint("t1") == make_cp(version=1)
    assert [e.name for e in revived.events("t1")] == [
        "runner.tier.selected", "runner.completed"]
    assert revived.get_object("o1")["data"]["status"] == "a"
    assert revived.get_ticket("apt-1")["state"] == "pending"
    assert revived.idempotency_get("k") is not None
    # feed order survives the restart
    cursor, events = revived.feed(0)
    assert cursor == 2 and [e.seq for e in events] == [1, 2]


def test_file_storage_appends_survive_without_flush(tmp_path):
    # events are their own durability channel: a new process must see them
    # even if nothing else changed after the append
    root = tmp_path / "store"
    storage = FileStorage(root)
    storage.put_task(make_task())
    storage.append_event("t1", "runner.tier.selected", {}, 1.0)
    assert [e.seq for e in FileStorage(root).events("t1")] == [1]


def test_fold_events_tracks_tier_phase_and_rounds():
    storage = MemoryStorage()
    storage.append_event("t1", "runner.tier.selected", {"tier": "standard"}, 1.0)
    storage.append_event("t1", "runner.phase.changed",
                         {"from": "planning", "to": "criticizing"}, 2.0)
    storage.append_event("t1", "agent.critic.reviewed",
                         {"verdict": "approve", "round": 0}, 3.0)
    storage.append_event("t1", "runner.phase.changed",
                         {"from": "criticizing", "to": "executing"}, 4.0)
    summary = fold_events(storage.events("t1"))
    assert summary["tier"] == "standard"
    assert summary["phase"] == "executing"
    assert summary["critic_rounds"] == 1


def test_replay_flags_checkpoint_divergence():
    storage = MemoryStorage()
    storage.append_event("t1", "runner.tier.selected", {"tier": "standard"}, 1.0)
    storage.persist_checkpoint(
        Checkpoint(task_id="t1", tier=Tier.FULL, phase=Phase.PLANNING,
                   active_roles=(RoleName.ORCHESTRATOR,), version=1))
    with pytest.raises(ReplayDivergence):
        replay(storage, "t1")


def test_replay_passes_on_agreement():
    storage = MemoryStorage()
    storage.append_event("t1", "runner.tier.selected", {"tier": "full"}, 1.0)
    storage.persist_checkpoint(
        Checkpoint(task_id="t1", tier=Tier.FULL, phase=Phase.PLANNING,
                   active_roles=(RoleName.ORCHESTRATOR,), version=1))
    summary = replay(storage, "t1")
    assert summary["tier"] == "full"
