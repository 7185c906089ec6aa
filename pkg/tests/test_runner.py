"""Phase machine paths per review level, loop bounds, and trace validation."""

from __future__ import annotations

import pytest

from govtier.engine import Engine, EngineSettings
from govtier.model import OpKind, Phase, RoleName, ScopeDescriptor, Task, Tier
from govtier.runner import Budget, RunnerConfig, validate_trace
from govtier.store import Event, MemoryStorage

PLAIN = frozenset({"objects.read", "objects.write", "objects.delete"})
OPERATOR = PLAIN | {"approvals.decide", "overrides.record"}
# unlisted users inherit demo defaults, so the plain user must be listed
OPERATOR_USERS = {"op-1": OPERATOR, "someone-else": PLAIN}


def make_task(task_id="t1", op_kind="read", estimate=1, brands=("brand-a",), cross=False):
    return Task(
        id=task_id,
        goal="runner test",
        op_kind=OpKind(op_kind),
        scope=ScopeDescriptor(tenant_id="ten", brand_ids=tuple(brands), cross_domain=cross),
        affected_object_estimate=estimate,
    )


def seed(engine, *object_ids, brand="brand-a"):
    for object_id in object_ids:
        engine.seed_objects([{"id": object_id,
                              "data": {"tenant_id": "ten", "brand_id": brand,
                                       "status": "draft"}}])


def step(tool, object_id="o1", **extra):
    payload = {"tenant_id": "ten", "brand_id": "brand-a", "object_id": object_id}
    if tool in ("object.update",):
        payload["fields"] = {"status": "synced"}
    payload.update(extra)
    return {"tool": tool, "payload": payload}


def phases(engine, task_id):
    out = []
    for event in engine.storage.events(task_id):
        if event.name == "runner.phase.changed":
            out.append((event.payload["from"], event.payload["to"], event.payload["cause"]))
    return out


def test_light_read_completes_without_reviewers():
    engine = Engine()
    seed(engine, "o1")
    outcome = engine.submit(make_task(), {"plans": [[step("object.read")]]})
    assert outcome.terminal == "completed"
    assert outcome.tier is Tier.LIGHT
    cp = engine.storage.load_checkpoint("t1")
    assert cp.opinions_for(RoleName.CRITIC) == ()
    assert cp.opinions_for(RoleName.VERIFIER) == ()
    visited = [dst for _, dst, _ in phases(engine, "t1")]
    assert visited == ["executing", "finalizing", "retrospecting", "completed"]
    assert validate_trace(engine.storage.events("t1")) == []


def test_standard_write_reviews_before_execution():
    engine = Engine()
    seed(engine, "o1")
    outcome = engine.submit(make_task(op_kind="single_write"),
                            {"plans": [[step("object.update")]]})
    assert outcome.terminal == "completed"
    assert outcome.tier is Tier.STANDARD
    names = [e.name for e in engine.storage.events("t1")]
    assert names.index("agent.critic.reviewed") < names.index("gateway.intent.executed")
    assert validate_trace(engine.storage.events("t1")) == []


def test_standard_critical_write_pulls_in_verifier():
    engine = Engine()
    seed(engine, "o1", "o2")
    scenario = {"plans": [[{"tool": "object.batch_update",
                            "payload": {"tenant_id": "ten", "brand_id": "brand-a",
                                        "object_ids": ["o1", "o2"],
                                        "fields": {"status": "synced"}}}]]}
    outcome = engine.submit(make_task(op_kind="batch_write", estimate=2), scenario)
    assert outcome.terminal == "completed"
    cp = engine.storage.load_checkpoint("t1")
    assert RoleName.VERIFIER in cp.active_roles
    assert len(cp.opinions_for(RoleName.VERIFIER)) == 1
    assert cp.verification["status"] == "passed"


def test_standard_plain_write_skips_verification():
    engine = Engine()
    seed(engine, "o1")
    engine.submit(make_task(op_kind="single_write"), {"plans": [[step("object.update")]]})
    visited = [dst for _, dst, _ in phases(engine, "t1")]
    assert "verifying" not in visited


def test_critic_revise_loop_replans_then_completes():
    engine = Engine()
    seed(engine, "o1")
    scenario = {
        "plans": [[step("object.update")], [step("object.update")]],
        "critic": [
            {"verdict": "revise", "confidence": 0.9,
             "findings": [{"id": "f1", "category": "missing_step",
                           "detail": "tighten the filter", "severity": "medium"}]},
            {"verdict": "approve", "confidence": 0.9},
        ],
    }
    outcome = engine.submit(make_task(op_kind="single_write"), scenario)
    assert outcome.terminal == "completed"
    cp = engine.storage.load_checkpoint("t1")
    assert len(cp.opinions_for(RoleName.WORKER)) == 2
    assert len(cp.opinions_for(RoleName.CRITIC)) == 2


def test_critic_budget_exhaustion_blocks():
    engine = Engine(settings=EngineSettings(budget=Budget(critic_rounds=2)))
    seed(engine, "o1")
    revise = {"verdict": "revise", "confidence": 0.9,
              "findings": [{"id": "f1", "category": "missing_step",
                            "detail": "never good enough", "severity": "medium"}]}
    scenario = {"plans": [[step("object.update")]] * 4, "critic": [revise] * 4}
    outcome = engine.submit(make_task(op_kind="single_write"), scenario)
    assert outcome.terminal == "blocked"
    assert len(engine.storage.load_checkpoint("t1").opinions_for(RoleName.CRITIC)) == 2
    causes = [c for _, dst, c in phases(engine, "t1") if dst == "blocked"]
    assert causes == ["critic_budget_exhausted"]


def test_ask_user_verdict_blocks_and_override_releases():
    engine = Engine(settings=EngineSettings(users=OPERATOR_USERS))
    seed(engine, "o1")
    scenario = {
        "plans": [[step("object.update")]],
        "critic": [{"verdict": "ask_user", "confidence": 0.9,
                    "findings": [{"id": "f1", "category": "risk_factor",
                                  "detail": "which object did you mean",
                                  "severity": "medium"}],
                    "notes": "which object did you mean"}],
    }
    outcome = engine.submit(make_task(op_kind="single_write"), scenario)
    assert outcome.terminal == "blocked"
    released = engine.record_override("t1", ["f1"], "op-1")
    assert released.terminal == "completed"
    moves = phases(engine, "t1")
    assert ("blocked", "executing", "override") in moves


def test_override_requires_authority():
    engine = Engine(settings=EngineSettings(users=OPERATOR_USERS))
    seed(engine, "o1")
    scenario = {"plans": [[step("object.update")]],
                "critic": [{"verdict": "ask_user", "confidence": 0.9, "notes": "?"}]}
    engine.submit(make_task(op_kind="single_write"), scenario)
    from govtier.gateway import AuthorityError
    with pytest.raises(AuthorityError):
        engine.record_override("t1", [], "someone-else")


def test_write_under_light_review_escalates():
    engine = Engine()
    seed(engine, "o1")
    # routed as a read, but the plan sneaks in a write step
    outcome = engine.submit(make_task(op_kind="read"), {"plans": [[step("object.update")]]})
    assert outcome.tier is Tier.STANDARD
    escalations = [e for e in engine.storage.events("t1")
                   if e.name == "runner.tier.selected" and e.payload.get("case") == "escalation"]
    assert len(escalations) == 1
    assert escalations[0].payload["cause"] == "write_in_light"
    assert escalations[0].payload["changed"] is True


def test_escalation_at_top_review_level_warns_instead():
    config = RunnerConfig(force_tier=Tier.FULL)
    engine = Engine(settings=EngineSettings(runner_config=config))
    seed(engine, "o1")
    scenario = {"plans": [[step("object.read")]],
                "critic": [{"verdict": "escalate", "confidence": 0.9,
                            "notes": "wants an even deeper look"},
                           {"verdict": "approve", "confidence": 0.9}]}
    outcome = engine.submit(make_task(), scenario)
    assert outcome.terminal == "completed"
    assert outcome.tier is Tier.FULL
    escalations = [e for e in engine.storage.events("t1")
                   if e.name == "runner.tier.selected" and e.payload.get("case") == "escalation"]
    assert len(escalations) == 1
    assert escalations[0].payload["changed"] is False
    assert "critic_undisclosed_risk" in escalations[0].payload["warning"]


def test_transient_fault_recovers_by_retry():
    # repair talent only joins at the deepest review level
    config = RunnerConfig(force_tier=Tier.FULL)
    engine = Engine(settings=EngineSettings(runner_config=config))
    seed(engine, "o1")
    scenario = {"plans": [[step("object.update")]],
                "faults": [{"tool": "object.update", "kind": "transient_error", "times": 1}]}
    outcome = engine.submit(make_task(op_kind="single_write"), scenario)
    assert outcome.terminal == "completed"
    cp = engine.storage.load_checkpoint("t1")
    assert len(cp.recovery_history) == 1
    assert cp.recovery_history[0]["decision"] == "retry"


def test_recovery_budget_checked_before_another_round():
    config = RunnerConfig(force_tier=Tier.FULL)
    engine = Engine(settings=EngineSettings(budget=Budget(recovery_rounds=1),
                                            runner_config=config))
    seed(engine, "o1")
    scenario = {"plans": [[step("object.update")]],
                "faults": [{"tool": "object.update", "kind": "transient_error", "times": 5}]}
    outcome = engine.submit(make_task(op_kind="single_write"), scenario)
    assert outcome.terminal == "failed"
    cp = engine.storage.load_checkpoint("t1")
    assert len(cp.recovery_history) == 1
    failures = [e.payload["cause"] for e in engine.storage.events("t1") if e.name == "runner.failed"]
    assert failures == ["recovery_budget_exhausted"]


def test_wall_clock_ceiling_fails_the_task():
    engine = Engine(settings=EngineSettings(budget=Budget(wall_clock_ceiling=3.0)))
    seed(engine, "o1")
    outcome = engine.submit(make_task(op_kind="single_write"),
                            {"plans": [[step("object.update")]]})
    assert outcome.terminal == "failed"
    failures = [e.payload["cause"] for e in engine.storage.events("t1") if e.name == "runner.failed"]
    assert failures == ["wall_clock_ceiling"]


def test_held_write_resumes_after_approval():
    engine = Engine(settings=EngineSettings(users=OPERATOR_USERS))
    seed(engine, "o1")
    outcome = engine.submit(make_task(op_kind="delete_irreversible"),
                            {"plans": [[step("object.delete")]]})
    assert outcome.terminal == "pending_approval"
    (ticket,) = engine.pending_approvals()
    resumed = engine.decide_approval(ticket["id"], approve=True, operator_id="op-1")
    assert resumed.terminal == "completed"
    assert engine.storage.get_object("o1") is None
    assert validate_trace(engine.storage.events("t1")) == []


def test_rejected_approval_fails_without_a_repair():
    engine = Engine(settings=EngineSettings(users=OPERATOR_USERS))
    seed(engine, "o1")
    engine.submit(make_task(op_kind="delete_irreversible"),
                  {"plans": [[step("object.delete")]]})
    (ticket,) = engine.pending_approvals()
    resumed = engine.decide_approval(ticket["id"], approve=False, operator_id="op-1",
                                     note="too risky today")
    assert resumed.terminal == "failed"
    assert engine.storage.get_object("o1") is not None
    moves = phases(engine, "t1")
    assert ("pending_approval", "recovering", "approval_rejected") in moves


def test_resume_rejects_terminal_tasks():
    engine = Engine()
    seed(engine, "o1")
    engine.submit(make_task(), {"plans": [[step("object.read")]]})
    from govtier.runner import TaskAlreadyTerminal
    with pytest.raises(TaskAlreadyTerminal):
        engine.resume("t1")


def test_reviewer_disabled_waives_the_review_gate():
    config = RunnerConfig(disabled_roles=frozenset({RoleName.CRITIC}))
    engine = Engine(settings=EngineSettings(runner_config=config))
    seed(engine, "o1")
    outcome = engine.submit(make_task(op_kind="single_write"),
                            {"plans": [[step("object.update")]]})
    assert outcome.terminal == "completed"
    moves = phases(engine, "t1")
    assert ("planning", "executing", "no_review_required") in moves
    assert validate_trace(engine.storage.events("t1")) == []


# --- validate_trace on hand-built histories -------------------------------------------


def fabricated(*rows):
    return [Event(seq=i, task_id="t1", name=name, payload=payload, timestamp=float(i))
            for i, (name, payload) in enumerate(rows, start=1)]


def test_validate_trace_rejects_sequence_gaps():
    events = fabricated(
        ("runner.tier.selected", {"tier": "light"}),
        ("runner.completed", {"result": {}}),
    )
    broken = [events[0], Event(seq=5, task_id="t1", name="runner.completed",
                               payload={}, timestamp=2.0)]
    problems = validate_trace(broken)
    assert any("seq" in p or "sequence" in p for p in problems)


def test_validate_trace_requires_tier_selection_first():
    events = fabricated(
        ("runner.phase.changed", {"from": "planning", "to": "executing", "cause": "x"}),
    )
    assert validate_trace(events) != []


def test_validate_trace_flags_execution_before_approval():
    events = fabricated(
        ("runner.tier.selected", {"tier": "standard"}),
        ("runner.phase.changed", {"from": "planning", "to": "criticizing",
                                  "cause": "plan_ready"}),
        ("gateway.intent.executed", {"tool": "object.update", "memoized": False,
                                     "result": {"status": "ok"}}),
    )
    problems = validate_trace(events)
    assert any("review" in p or "approval" in p for p in problems)


def test_validate_trace_flags_illegal_phase_move():
    events = fabricated(
        ("runner.tier.selected", {"tier": "light"}),
        ("runner.phase.changed", {"from": "planning", "to": "verifying",
                                  "cause": "bogus"}),
    )
    assert validate_trace(events) != []
