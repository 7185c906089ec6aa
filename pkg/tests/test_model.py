"""Domain type validation and serialization round-trips."""

from __future__ import annotations

import pytest

from govtier.model import (
    AgentOpinion,
    Checkpoint,
    OpKind,
    Phase,
    RoleName,
    ScopeDescriptor,
    SuccessCriterion,
    Task,
    Tier,
)
from govtier.store import Event


def make_scope(**overrides):
    record = {"tenant_id": "ten", "brand_ids": ("brand-a",), "cross_domain": False}
    record.update(overrides)
    return ScopeDescriptor(**record)


def make_task(**overrides):
    record = {
        "id": "t1",
        "goal": "demo",
        "op_kind": OpKind.READ,
        "scope": make_scope(),
    }
    record.update(overrides)
    return Task(**record)


def test_task_requires_nonempty_id():
    with pytest.raises(ValueError):
        make_task(id="")


def test_task_tenant_defaults_to_scope_tenant():
    assert make_task().tenant_id == "ten"


def test_task_tenant_mismatch_rejected():
    with pytest.raises(ValueError):
        make_task(tenant_id="other")


def test_task_negative_estimate_rejected():
    with pytest.raises(ValueError):
        make_task(affected_object_estimate=-1)


def test_task_category_crosses_kind_and_boundary():
    local = make_task(op_kind=OpKind.SINGLE_WRITE)
    assert local.category() == "single_write:local"
    crossing = make_task(
        op_kind=OpKind.BATCH_WRITE,
        scope=make_scope(brand_ids=("brand-a", "brand-b"), cross_domain=True),
    )
    assert crossing.category() == "batch_write:x"


def test_task_is_write_flag():
    assert not make_task(op_kind=OpKind.READ).is_write
    for kind in (OpKind.SINGLE_WRITE, OpKind.BATCH_WRITE, OpKind.DELETE_IRREVERSIBLE):
        assert make_task(op_kind=kind).is_write


def test_task_dict_round_trip():
    task = make_task(
        op_kind=OpKind.BATCH_WRITE,
        affected_object_estimate=7,
        success_criteria=(SuccessCriterion(id="c1", description="all ok",
                                           check_kind="tool_result_flag",
                                           target={"flag": "ok"}),),
        context={"note": "x"},
    )
    assert Task.from_dict(task.to_dict()) == task


def test_task_from_dict_rejects_unknown_fields():
    record = make_task().to_dict()
    record["surprise"] = 1
    with pytest.raises(ValueError):
        Task.from_dict(record)


def test_task_from_dict_rejects_missing_fields():
    record = make_task().to_dict()
    del record["goal"]
    with pytest.raises(ValueError):
        Task.from_dict(record)


def test_scope_single_boundary():
    assert make_scope().single_boundary
    assert not make_scope(brand_ids=("a", "b")).single_boundary


def test_scope_requires_tenant():
    with pytest.raises(ValueError):
        make_scope(tenant_id="")


def test_opinion_critic_requires_confidence():
    with pytest.raises(ValueError):
        AgentOpinion(role=RoleName.CRITIC, round=0, payload={"verdict": "approve"},
                     confidence=None)


def test_checkpoint_round_trip():
    cp = Checkpoint(
        task_id="t1",
        tier=Tier.STANDARD,
        phase=Phase.EXECUTING,
        active_roles=(RoleName.ORCHESTRATOR, RoleName.WORKER, RoleName.RETROSPECTOR),
        opinions=(AgentOpinion(role=RoleName.WORKER, round=0,
                               payload={"steps": [], "revision": 0}),),
        version=3,
    )
    assert Checkpoint.from_dict(cp.to_dict()) == cp


def test_checkpoint_version_starts_at_one():
    with pytest.raises(ValueError):
        Checkpoint(task_id="t1", tier=Tier.LIGHT, phase=Phase.PLANNING,
                   active_roles=(), version=0)


def test_event_round_trip():
    event = Event(task_id="t1", seq=4, name="runner.phase.changed",
                  payload={"from": "planning", "to": "executing"}, timestamp=12.5)
    assert Event.from_dict(event.to_dict()) == event


def test_event_seq_positive():
    with pytest.raises(ValueError):
        Event(task_id="t1", seq=0, name="n", payload={}, timestamp=0.0)
