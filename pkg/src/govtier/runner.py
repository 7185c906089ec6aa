"""Execution runner: drives one task through its review phases.

The runner owns the single writer lease for a task, persists a
checkpoint on every state change (compare-and-set), and appends the
audit events that let a trace be replayed and checked against the
checkpoint.  Round budgets bound review and recovery loops, and a
simulated wall-clock meter bounds the whole run.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

from .catalog import RiskLevel, ToolCatalog
from .gateway import ApprovalTicket, Gateway, RuntimeContext, ToolResult
from .model import (
    TERMINAL_PHASES,
    AgentOpinion,
    Checkpoint,
    FailureHistory,
    Phase,
    RoleName,
    Task,
    Tier,
)
from .roles import (
    IntentUnclassifiable,
    Plan,
    PlanningFailed,
    RetroReport,
    RoleTeam,
    Verdict,
    VerifyReport,
    orchestrate,
    roles_for_tier,
    scripted_team,
)
from .store import Event, Storage
from .tiering import EscalationTrigger, TierPolicy
from .tiering import escalate as escalate_tier

# Allowed phase moves. Blocked -> Executing additionally requires a recorded
# override, and Executing -> Verifying requires Full tier or a Standard-tier
# plan containing a critical write; the runner checks those refinements.
TRANSITIONS: dict[Phase, frozenset[Phase]] = {
    Phase.PLANNING: frozenset({Phase.CRITICIZING, Phase.EXECUTING}),
    Phase.CRITICIZING: frozenset(
        {Phase.CRITICIZING, Phase.EXECUTING, Phase.BLOCKED, Phase.PLANNING}
    ),
    Phase.EXECUTING: frozenset(
        {Phase.VERIFYING, Phase.FINALIZING, Phase.PENDING_APPROVAL, Phase.RECOVERING}
    ),
    Phase.PENDING_APPROVAL: frozenset({Phase.EXECUTING, Phase.RECOVERING, Phase.BLOCKED}),
    Phase.VERIFYING: frozenset({Phase.RECOVERING, Phase.FINALIZING}),
    Phase.RECOVERING: frozenset(
        {Phase.EXECUTING, Phase.BLOCKED, Phase.FAILED, Phase.CRITICIZING}
    ),
    Phase.FINALIZING: frozenset({Phase.RETROSPECTING}),
    Phase.RETROSPECTING: frozenset({Phase.COMPLETED}),
    Phase.BLOCKED: frozenset({Phase.EXECUTING}),
    Phase.COMPLETED: frozenset(),
    Phase.FAILED: frozenset(),
}

class IllegalTransition(Exception):
    pass


class LeaseHeld(Exception):
    """Another runner currently owns the task's writer lease."""


class UnknownTask(LookupError):
    pass


class TaskAlreadyTerminal(Exception):
    pass


@dataclass(frozen=True, slots=True)
class Budget:
    """Loop and wall-clock bounds for one task run."""

    critic_rounds: int = 3
    recovery_rounds: int = 2
    wall_clock_ceiling: float = 300.0

    def __post_init__(self) -> None:
        if self.critic_rounds < 1 or self.recovery_rounds < 1:
            raise ValueError("round budgets must be at least 1")
        if self.wall_clock_ceiling <= 0:
            raise ValueError("wall clock ceiling must be positive")


@dataclass(frozen=True, slots=True)
class RunnerConfig:
    """Feature toggles and latency constants for a run configuration."""

    force_tier: Tier | None = None
    escalation_enabled: bool = True
    disabled_roles: frozenset[RoleName] = frozenset()
    role_latency_seconds: float = 2.0
    execution_latency_seconds: float = 1.0
    retro_in_background: bool = False


@dataclass(slots=True)
class Meter:
    """Counts role calls and executions; charges simulated seconds."""

    role_calls: dict[str, int] = field(default_factory=dict)
    executions: int = 0
    wait_seconds: float = 0.0

    def charge_role(self, role: RoleName) -> None:
        self.role_calls[role.value] = self.role_calls.get(role.value, 0) + 1

    def charge_execution(self) -> None:
        self.executions += 1

    def charge_wait(self, seconds: float) -> None:
        self.wait_seconds += max(0.0, seconds)

    def simulated_seconds(self, config: RunnerConfig) -> float:
        # the retrospector runs after the result and does not block the user
        blocking = sum(
            n for role, n in self.role_calls.items() if role != RoleName.RETROSPECTOR.value
        )
        return (
            blocking * config.role_latency_seconds
            + self.executions * config.execution_latency_seconds
            + self.wait_seconds
        )

    def to_dict(self, config: RunnerConfig) -> dict:
        return {
            "role_calls": dict(self.role_calls),
            "executions": self.executions,
            "wait_seconds": self.wait_seconds,
            "simulated_seconds": self.simulated_seconds(config),
        }


@dataclass(frozen=True, slots=True)
class RunOutcome:
    """What one drive of the runner produced."""

    task_id: str
    terminal: str
    phase: Phase
    tier: Tier
    result: dict
    meter: dict
    checkpoint_version: int


@dataclass(slots=True)
class _RunState:
    task: Task
    scenario: dict
    team: RoleTeam
    cp: Checkpoint
    plan: Plan | None = None
    results: list[ToolResult] = field(default_factory=list)
    meter: Meter = field(default_factory=Meter)


TeamFactory = Callable[[Task, Mapping[str, object] | None, ToolCatalog], RoleTeam]


def _default_permissions(user_id: str) -> frozenset[str]:
    return frozenset({"objects.read", "objects.write", "objects.delete"})


class Runner:
    """Drives tasks over shared storage through a single gateway."""

    def __init__(
        self,
        storage: Storage,
        gateway: Gateway,
        catalog: ToolCatalog,
        *,
        policy: TierPolicy | None = None,
        budget: Budget | None = None,
        config: RunnerConfig | None = None,
        history: FailureHistory | None = None,
        clock: Callable[[], float] | None = None,
        team_factory: TeamFactory | None = None,
        permission_resolver: Callable[[str], frozenset[str]] | None = None,
        runner_id: str = "runner-1",
        after_commit: Callable[[str], None] | None = None,
        retro_executor=None,
    ) -> None:
        self.storage = storage
        self.gateway = gateway
        self.catalog = catalog
        self.policy = policy or TierPolicy()
        self.budget = budget or Budget()
        self.config = config or RunnerConfig()
        self.history = history or FailureHistory()
        self.clock = clock or (lambda: 0.0)
        self.team_factory = team_factory or scripted_team
        self.permission_resolver = permission_resolver or _default_permissions
        self.runner_id = runner_id
        self.after_commit = after_commit or (lambda label: None)
        self.retro_executor = retro_executor
        self._retro_futures: list = []

    # --- public entry points ------------------------------------------------

    def run(self, task: Task, scenario: Mapping[str, object] | None = None) -> RunOutcome:
        scenario = dict(scenario or {})
        self.storage.put_scenario(task.id, scenario)
        self._arm_faults(task.id, scenario)
        if not self.storage.acquire_lease(
            task.id, self.runner_id, self.clock(), self.budget.wall_clock_ceiling
        ):
            raise LeaseHeld(f"task {task.id} is owned by another runner")
        try:
            state = self._start(task, scenario)
            if state.cp.phase is Phase.BLOCKED:
                return self._outcome(state, "blocked")
            return self._drive(state)
        finally:
            self.storage.release_lease(task.id, self.runner_id)

    def resume(self, task_id: str) -> RunOutcome:
        cp = self.storage.load_checkpoint(task_id)
        if cp is None:
            raise UnknownTask(f"no checkpoint for task {task_id}")
        if cp.phase in TERMINAL_PHASES:
            raise TaskAlreadyTerminal(f"task {task_id} already {cp.phase.value}")
        if not self.storage.acquire_lease(
            task_id, self.runner_id, self.clock(), self.budget.wall_clock_ceiling
        ):
            raise LeaseHeld(f"task {task_id} is owned by another runner")
        try:
            self._reconcile(cp)
            task = self.storage.get_task(task_id)
            if task is None:
                raise UnknownTask(f"task {task_id} has a checkpoint but no task record")
            scenario = self.storage.get_scenario(task_id) or {}
            state = _RunState(
                task=task,
                scenario=dict(scenario),
                team=self.team_factory(task, scenario, self.catalog),
                cp=cp,
                plan=self._current_plan(cp),
            )
            if cp.phase in (Phase.VERIFYING, Phase.RECOVERING, Phase.PENDING_APPROVAL):
                state.results = self._results_from_events(task_id)
            return self._drive(state)
        finally:
            self.storage.release_lease(task_id, self.runner_id)

    def join_retrospections(self) -> None:
        """Wait for any background retrospections scheduled by this runner."""
        futures, self._retro_futures = self._retro_futures, []
        for future in futures:
            future.result()

    # --- setup ----------------------------------------------------------------

    def _arm_faults(self, task_id: str, scenario: Mapping[str, object]) -> None:
        for fault in scenario.get("faults", ()):
            self.catalog.inject_fault(
                task_id,
                str(fault["tool"]),
                str(fault["kind"]),
                times=int(fault.get("times", 1)),
                **dict(fault.get("details", {})),
            )

    def _start(self, task: Task, scenario: Mapping[str, object]) -> _RunState:
        now = self.clock()
        try:
            outcome = orchestrate(
                task,
                self.history,
                self.policy,
                now,
                force_tier=self.config.force_tier,
                disabled_roles=self.config.disabled_roles,
                scenario=scenario,
            )
        except IntentUnclassifiable as exc:
            cp = Checkpoint(
                task_id=task.id,
                tier=Tier.STANDARD,
                phase=Phase.BLOCKED,
                active_roles=roles_for_tier(Tier.STANDARD, self.config.disabled_roles),
                opinions=(
                    self._opinion(
                        RoleName.ORCHESTRATOR,
                        0,
                        {"kind": "block", "reason": "intent_unclassifiable", "question": exc.question},
                    ),
                ),
            )
            self.storage.put_task(task)
            self.storage.persist_checkpoint(cp)
            team = self.team_factory(task, scenario, self.catalog)
            state = _RunState(task=task, scenario=dict(scenario), team=team, cp=cp)
            state.meter.charge_role(RoleName.ORCHESTRATOR)
            return state

        task = task.with_success_criteria(outcome.criteria)
        self.storage.put_task(task)
        decision = outcome.decision
        cp = Checkpoint(
            task_id=task.id,
            tier=decision.tier,
            phase=Phase.PLANNING,
            active_roles=outcome.active_roles,
            opinions=(
                self._opinion(
                    RoleName.ORCHESTRATOR,
                    0,
                    {
                        "kind": "tier_decision",
                        "decision": decision.to_dict(),
                        "criteria": [c.to_dict() for c in outcome.criteria],
                    },
                ),
            ),
        )
        self.storage.persist_checkpoint(cp)
        self._emit(
            task.id,
            "runner.tier.selected",
            {
                "tier": decision.tier.value,
                "risk": decision.risk,
                "case": decision.case,
                "signals": decision.signals.as_tuple(),
                "cause": "initial",
                "changed": False,
            },
        )
        self.after_commit("initial_checkpoint")
        team = self.team_factory(task, scenario, self.catalog)
        state = _RunState(task=task, scenario=dict(scenario), team=team, cp=cp)
        state.meter.charge_role(RoleName.ORCHESTRATOR)
        return state

    # --- drive loop --------------------------------------------------------------

    def _drive(self, state: _RunState) -> RunOutcome:
        while True:
            phase = state.cp.phase
            if phase not in TERMINAL_PHASES and self._over_ceiling(state):
                self._fail(state, "wall_clock_ceiling", {"limit": self.budget.wall_clock_ceiling})
                continue
            if phase is Phase.PLANNING:
                self._do_planning(state)
            elif phase is Phase.CRITICIZING:
                self._do_criticizing(state)
            elif phase is Phase.EXECUTING:
                hold = self._do_executing(state)
                if hold is not None:
                    return hold
            elif phase is Phase.VERIFYING:
                self._do_verifying(state)
            elif phase is Phase.RECOVERING:
                self._do_recovering(state)
            elif phase is Phase.PENDING_APPROVAL:
                hold = self._do_pending(state)
                if hold is not None:
                    return hold
            elif phase is Phase.BLOCKED:
                hold = self._do_blocked(state)
                if hold is not None:
                    return hold
            elif phase is Phase.FINALIZING:
                self._do_finalizing(state)
            elif phase is Phase.RETROSPECTING:
                hold = self._do_retrospecting(state)
                if hold is not None:
                    return hold
            elif phase is Phase.COMPLETED:
                return self._outcome(state, "completed")
            elif phase is Phase.FAILED:
                return self._outcome(state, "failed")
            else:  # pragma: no cover - enum is closed
                raise IllegalTransition(f"unhandled phase {phase}")

    def _over_ceiling(self, state: _RunState) -> bool:
        return state.meter.simulated_seconds(self.config) > self.budget.wall_clock_ceiling

    # --- phase handlers -------------------------------------------------------------

    def _do_planning(self, state: _RunState) -> None:
        revision = len(state.cp.opinions_for(RoleName.WORKER))
        findings = ()
        critic_opinions = state.cp.opinions_for(RoleName.CRITIC)
        if critic_opinions:
            findings = Verdict.from_dict(critic_opinions[-1].payload).findings
        state.meter.charge_role(RoleName.WORKER)
        try:
            plan = state.team.worker.plan(state.task, revision, findings)
        except PlanningFailed as exc:
            self._fail(state, "planning_failed", {"message": str(exc)})
            return
        state.plan = plan
        opinion = self._opinion(
            RoleName.WORKER,
            revision,
            plan.to_dict(),
            fingerprint=state.team.fingerprint_of(RoleName.WORKER),
        )
        state.cp = state.cp.with_opinion(opinion)
        self._persist(state)
        self.after_commit("plan_recorded")

        if self.config.escalation_enabled:
            if state.cp.tier is Tier.LIGHT and plan.write_steps(self.catalog):
                self._escalate(state, EscalationTrigger.WRITE_IN_LIGHT)
            if (
                state.cp.tier is not Tier.FULL
                and len(plan.brands_touched(self.catalog)) > 1
            ):
                self._escalate(state, EscalationTrigger.SCOPE_EXPANSION)

        if RoleName.CRITIC in state.cp.active_roles:
            self._transition(state, Phase.CRITICIZING, "plan_ready")
        else:
            self._transition(state, Phase.EXECUTING, "no_review_required")

    def _do_criticizing(self, state: _RunState) -> None:
        rounds = len(state.cp.opinions_for(RoleName.CRITIC))
        if rounds >= self.budget.critic_rounds:
            self._block(state, "critic_budget_exhausted", "review rounds exhausted without approval")
            return
        if state.plan is None:
            self._fail(state, "internal_error", {"message": "review reached with no plan"})
            return
        state.meter.charge_role(RoleName.CRITIC)
        runtime = self._runtime(state)

        def preview(intent):
            state.meter.charge_execution()
            return self.gateway.dry_run(intent, runtime)

        verdict = state.team.critic.review(state.task, state.plan, state.cp.tier, rounds, preview)
        opinion = self._opinion(
            RoleName.CRITIC,
            rounds,
            verdict.to_dict(),
            confidence=verdict.confidence,
            fingerprint=state.team.fingerprint_of(RoleName.CRITIC),
        )
        state.cp = state.cp.with_opinion(opinion)
        self._persist(state)
        self._emit(
            state.task.id,
            "agent.critic.reviewed",
            {
                "round": rounds,
                "verdict": verdict.verdict,
                "confidence": verdict.confidence,
                "findings": len(verdict.findings),
                "soft_warning": verdict.soft_warning,
                "auto_resolved": list(verdict.auto_resolved),
            },
        )
        self.after_commit("critic_reviewed")

        if verdict.verdict == "approve":
            self._transition(state, Phase.EXECUTING, "plan_approved")
        elif verdict.verdict == "revise":
            self._transition(state, Phase.PLANNING, "revision_requested")
        elif verdict.verdict == "reject":
            self._transition(state, Phase.CRITICIZING, "re_review_after_reject")
        elif verdict.verdict == "ask_user":
            question = verdict.notes or "reviewer needs user input"
            self._block(state, "critic_ask_user", question)
        elif verdict.verdict == "escalate":
            self._escalate(state, EscalationTrigger.CRITIC_UNDISCLOSED_RISK)
            self._transition(state, Phase.CRITICIZING, "re_review_after_escalation")

    def _do_executing(self, state: _RunState) -> RunOutcome | None:
        if state.plan is None:
            self._fail(state, "internal_error", {"message": "execution reached with no plan"})
            return None
        runtime = self._runtime(state)
        results: list[ToolResult] = []
        for index, step in enumerate(state.plan.steps):
            state.meter.charge_execution()
            result = self.gateway.execute_intent(step, runtime)
            results.append(result)
            if result.status == "held_for_approval":
                state.results = results
                if self.config.escalation_enabled:
                    self._escalate(state, EscalationTrigger.GATEWAY_MEDIUM_HIGH_RISK)
                self._transition(
                    state,
                    Phase.PENDING_APPROVAL,
                    "approval_required",
                    extra={"ticket_id": result.data.get("ticket_id"), "step": index},
                )
                self.after_commit("hold_recorded")
                return self._outcome(state, "pending_approval")
            if result.status == "error":
                state.results = results
                diagnostic = {
                    "step": index,
                    "tool": step.tool,
                    "error_code": result.error_code,
                    "retry_eligible": result.retry_eligible,
                    "data": dict(result.data),
                }
                if self._recovery_available(state):
                    self._transition(state, Phase.RECOVERING, "execution_error", extra=diagnostic)
                else:
                    self._fail(state, "execution_error", diagnostic)
                return None
        state.results = results
        if self._verification_required(state):
            changes = {}
            if RoleName.VERIFIER not in state.cp.active_roles:
                # Standard tier pulls the checker in just for critical writes
                changes["active_roles"] = state.cp.active_roles + (RoleName.VERIFIER,)
            self._transition(state, Phase.VERIFYING, "execution_complete", **changes)
        else:
            self._transition(state, Phase.FINALIZING, "execution_complete")
        return None

    def _do_verifying(self, state: _RunState) -> None:
        rounds = len(state.cp.opinions_for(RoleName.VERIFIER))
        state.meter.charge_role(RoleName.VERIFIER)
        runtime = self._runtime(state)

        def reread(intent):
            state.meter.charge_execution()
            return self.gateway.dry_run(intent, runtime)

        report = state.team.verifier.verify(
            state.task, state.task.success_criteria, state.results, rounds, reread=reread
        )
        opinion = self._opinion(
            RoleName.VERIFIER,
            rounds,
            report.to_dict(),
            confidence=report.confidence,
            fingerprint=state.team.fingerprint_of(RoleName.VERIFIER),
        )
        state.cp = state.cp.with_opinion(opinion, verification=report.to_dict())
        self._persist(state)
        self._emit(
            state.task.id,
            "agent.verifier.checked",
            {"round": rounds, "status": report.status, "confidence": report.confidence},
        )
        self.after_commit("verifier_checked")

        # an uncertain report is never treated as a pass
        if report.status == "passed":
            self._transition(state, Phase.FINALIZING, "verified")
        elif self._recovery_available(state):
            self._transition(state, Phase.RECOVERING, f"verify_{report.status}")
        else:
            self._fail(
                state,
                "verification_failed",
                {"status": report.status, "criteria": list(report.criteria_results)},
            )

    def _do_recovering(self, state: _RunState) -> None:
        rounds = len(state.cp.recovery_history)
        if rounds >= self.budget.recovery_rounds:
            self._fail(state, "recovery_budget_exhausted", {"rounds": rounds})
            return
        remaining = self.budget.recovery_rounds - rounds
        report = (
            VerifyReport.from_dict(state.cp.verification)
            if state.cp.verification is not None
            else None
        )
        state.meter.charge_role(RoleName.RECOVERY)
        if state.plan is None:
            self._fail(state, "internal_error", {"message": "recovery reached with no plan"})
            return
        try:
            decision = state.team.recovery.decide(
                state.task,
                state.plan,
                state.results,
                report,
                remaining,
                state.cp.avoidance,
                rounds,
            )
        except (PlanningFailed, ValueError) as exc:
            self._fail(state, "recovery_failed", {"message": str(exc)})
            return
        entry = {
            "round": rounds,
            "decision": decision.decision,
            "notes": decision.notes,
            "avoid": list(decision.avoid),
            "wait_seconds": decision.wait_seconds,
            "repair_revision": None
            if decision.repair_plan is None
            else decision.repair_plan.revision,
        }
        opinion = self._opinion(
            RoleName.RECOVERY,
            rounds,
            decision.to_dict(),
            fingerprint=state.team.fingerprint_of(RoleName.RECOVERY),
        )
        state.cp = state.cp.with_opinion(
            opinion,
            recovery_history=state.cp.recovery_history + (entry,),
            avoidance=state.cp.avoidance + tuple(decision.avoid),
        )
        self._persist(state)
        self._emit(
            state.task.id,
            "agent.recovery.decided",
            {"round": rounds, "decision": decision.decision, "notes": decision.notes},
        )
        self.after_commit("recovery_decided")

        if decision.decision == "fail":
            self._fail(state, "recovery_gave_up", {"notes": decision.notes, "round": rounds})
            return
        if decision.decision == "ask_user":
            self._block(state, "recovery_ask_user", decision.notes or "recovery needs user input")
            return
        if decision.repair_plan is not None:
            state.plan = decision.repair_plan
        state.results = []
        if decision.decision == "wait":
            state.meter.charge_wait(decision.wait_seconds)
            self._transition(state, Phase.EXECUTING, "retry_after_wait")
        elif decision.decision == "replan" and self._repair_needs_review(state.plan):
            self._transition(state, Phase.CRITICIZING, "high_risk_repair")
        else:
            self._transition(state, Phase.EXECUTING, decision.decision)

    def _do_pending(self, state: _RunState) -> RunOutcome | None:
        ticket = self._latest_ticket(state.task.id)
        if ticket is None or ticket.state == "pending":
            return self._outcome(state, "pending_approval")
        if ticket.state == "approved":
            self._transition(state, Phase.EXECUTING, "approval_granted")
            return None
        # rejected: surface a non-retryable error to recovery, else block
        self.gateway.consume_ticket(ticket.id)
        rejection = ToolResult(
            status="error",
            error_code="execution_failed",
            retry_eligible=False,
            data={
                "reason": "approval_rejected",
                "ticket_id": ticket.id,
                "note": ticket.decision_note,
            },
        )
        state.results = list(state.results) + [rejection]
        if self._recovery_available(state):
            self._transition(state, Phase.RECOVERING, "approval_rejected")
        else:
            self._block(state, "approval_rejected", ticket.decision_note or "approval was rejected")
        return None

    def _do_blocked(self, state: _RunState) -> RunOutcome | None:
        block_at, override_at = None, None
        for position, opinion in enumerate(state.cp.opinions):
            if opinion.role is not RoleName.ORCHESTRATOR:
                continue
            kind = opinion.payload.get("kind")
            if kind == "block":
                block_at = position
            elif kind == "override":
                override_at = position
        if override_at is not None and (block_at is None or override_at > block_at):
            if state.plan is None:
                self._fail(state, "internal_error", {"message": "override with no plan on record"})
                return None
            self._transition(state, Phase.EXECUTING, "override")
            return None
        return self._outcome(state, "blocked")

    def _do_finalizing(self, state: _RunState) -> None:
        already = any(e.name == "runner.completed" for e in self.storage.events(state.task.id))
        if not already:
            summary = {
                "tier": state.cp.tier.value,
                "steps": 0 if state.plan is None else len(state.plan.steps),
                "verification": state.cp.verification,
                "executions": state.meter.executions,
            }
            self._emit(state.task.id, "runner.completed", {"result": summary})
        self.after_commit("finalized")
        self._transition(state, Phase.RETROSPECTING, "wrap_up")

    def _do_retrospecting(self, state: _RunState) -> RunOutcome | None:
        if state.cp.retrospective is not None:
            self._transition(state, Phase.COMPLETED, "retrospection_recorded")
            return None
        if self.config.retro_in_background and self.retro_executor is not None:
            # the result is already final; lessons are written by the background job
            future = self.retro_executor.submit(self._background_retro, state.task.id)
            self._retro_futures.append(future)
            return self._outcome(state, "completed")
        report = self._run_retro(state)
        state.cp = state.cp.with_opinion(
            self._opinion(
                RoleName.RETROSPECTOR,
                0,
                report.to_dict(),
                fingerprint=state.team.fingerprint_of(RoleName.RETROSPECTOR),
            ),
            retrospective=report.to_dict(),
        )
        self._persist(state)
        self._emit(
            state.task.id,
            "agent.retrospector.reported",
            {"pattern_summary": report.pattern_summary, "skill_drafts": len(report.skill_drafts)},
        )
        self._transition(state, Phase.COMPLETED, "retrospection_recorded")
        return None

    # --- retrospection ---------------------------------------------------------------

    def _run_retro(self, state: _RunState) -> RetroReport:
        state.meter.charge_role(RoleName.RETROSPECTOR)
        events = self.storage.events(state.task.id)
        return state.team.retrospector.retrospect(state.task, state.cp, events)

    def _background_retro(self, task_id: str) -> None:
        cp = self.storage.load_checkpoint(task_id)
        if cp is None or cp.retrospective is not None:
            return
        task = self.storage.get_task(task_id)
        if task is None:
            return
        scenario = self.storage.get_scenario(task_id) or {}
        team = self.team_factory(task, scenario, self.catalog)
        events = self.storage.events(task_id)
        try:
            report = team.retrospector.retrospect(task, cp, events)
        except Exception as exc:  # never crashes the task; log in the event stream
            self._emit(task_id, "agent.retrospector.reported", {"error": str(exc)})
            return
        opinion = self._opinion(
            RoleName.RETROSPECTOR,
            0,
            report.to_dict(),
            fingerprint=team.fingerprint_of(RoleName.RETROSPECTOR),
        )
        updated = cp.with_opinion(opinion, retrospective=report.to_dict())
        self.storage.persist_checkpoint(updated)
        self._emit(
            task_id,
            "agent.retrospector.reported",
            {"pattern_summary": report.pattern_summary, "skill_drafts": len(report.skill_drafts)},
        )
        if updated.phase is Phase.RETROSPECTING:
            final = updated.advance(phase=Phase.COMPLETED)
            self.storage.persist_checkpoint(final)
            self._emit(
                task_id,
                "runner.phase.changed",
                {"from": "retrospecting", "to": "completed", "cause": "retrospection_recorded"},
            )

    # --- fail / block / escalate -------------------------------------------------------

    def _fail(self, state: _RunState, cause: str, diagnostic: Mapping[str, object]) -> None:
        self._transition(
            state,
            Phase.FAILED,
            cause,
            opinion=self._opinion(
                RoleName.ORCHESTRATOR,
                len(state.cp.opinions_for(RoleName.ORCHESTRATOR)),
                {"kind": "failure", "cause": cause, "diagnostic": dict(diagnostic)},
            ),
        )
        self._emit(
            state.task.id, "runner.failed", {"cause": cause, "diagnostic": dict(diagnostic)}
        )
        # retrospection still runs on failures; the phase stays failed
        report = self._run_retro(state)
        state.cp = state.cp.with_opinion(
            self._opinion(
                RoleName.RETROSPECTOR,
                0,
                report.to_dict(),
                fingerprint=state.team.fingerprint_of(RoleName.RETROSPECTOR),
            ),
            retrospective=report.to_dict(),
        )
        self._persist(state)
        self._emit(
            state.task.id,
            "agent.retrospector.reported",
            {"pattern_summary": report.pattern_summary, "skill_drafts": len(report.skill_drafts)},
        )

    def _block(self, state: _RunState, reason: str, detail: str) -> None:
        self._transition(
            state,
            Phase.BLOCKED,
            reason,
            opinion=self._opinion(
                RoleName.ORCHESTRATOR,
                len(state.cp.opinions_for(RoleName.ORCHESTRATOR)),
                {"kind": "block", "reason": reason, "detail": detail},
            ),
        )

    def _escalate(self, state: _RunState, trigger: EscalationTrigger) -> None:
        result = escalate_tier(state.cp.tier, trigger)
        opinion = self._opinion(
            RoleName.ORCHESTRATOR,
            len(state.cp.opinions_for(RoleName.ORCHESTRATOR)),
            {
                "kind": "tier_escalation",
                "trigger": trigger.value,
                "from": state.cp.tier.value,
                "to": result.tier.value,
                "changed": result.changed,
                "warning": result.warning,
            },
        )
        if result.changed:
            state.cp = state.cp.with_opinion(
                opinion,
                tier=result.tier,
                active_roles=roles_for_tier(result.tier, self.config.disabled_roles),
            )
        else:
            state.cp = state.cp.with_opinion(opinion)
        self._persist(state)
        self._emit(
            state.task.id,
            "runner.tier.selected",
            {
                "tier": result.tier.value,
                "cause": trigger.value,
                "changed": result.changed,
                "warning": result.warning,
                "risk": None,
                "case": "escalation",
                "signals": None,
            },
        )
        self.after_commit(f"tier_escalated:{trigger.value}")

    # --- mechanics ------------------------------------------------------------------------

    def _transition(
        self,
        state: _RunState,
        to: Phase,
        cause: str,
        opinion: AgentOpinion | None = None,
        extra: Mapping[str, object] | None = None,
        **changes,
    ) -> None:
        src = state.cp.phase
        self._check_transition(state, src, to, cause)
        if opinion is not None:
            state.cp = state.cp.with_opinion(opinion, phase=to, **changes)
        else:
            state.cp = state.cp.advance(phase=to, **changes)
        self._persist(state)
        payload = {"from": src.value, "to": to.value, "cause": cause}
        if extra:
            payload.update(extra)
        self._emit(state.task.id, "runner.phase.changed", payload)
        self.after_commit(f"phase:{to.value}")

    def _check_transition(self, state: _RunState, src: Phase, to: Phase, cause: str) -> None:
        if to is Phase.FAILED:
            return  # any phase may fail fatally
        allowed = TRANSITIONS.get(src, frozenset())
        if to not in allowed:
            raise IllegalTransition(f"{src.value} -> {to.value} is not allowed")
        if src is Phase.BLOCKED and to is Phase.EXECUTING and cause != "override":
            raise IllegalTransition("blocked tasks resume execution only via override")
        if src is Phase.EXECUTING and to is Phase.VERIFYING:
            tier = state.cp.tier
            if tier is Tier.LIGHT:
                raise IllegalTransition("verification is never entered from the light tier")
            if tier is Tier.STANDARD and state.plan is not None:
                if not state.plan.critical_write_steps(self.catalog):
                    raise IllegalTransition(
                        "standard tier verifies only plans containing critical writes"
                    )

    def _persist(self, state: _RunState) -> None:
        self.storage.persist_checkpoint(state.cp)

    def _emit(self, task_id: str, name: str, payload: Mapping[str, object]) -> Event:
        return self.storage.append_event(task_id, name, dict(payload), self.clock())

    def _opinion(
        self,
        role: RoleName,
        round: int,
        payload: Mapping[str, object],
        confidence: float | None = None,
        fingerprint: str = "runner",
    ) -> AgentOpinion:
        return AgentOpinion(
            role=role,
            round=round,
            payload=dict(payload),
            confidence=confidence,
            timestamp=self.clock(),
            config_fingerprint=fingerprint,
        )

    def _runtime(self, state: _RunState) -> RuntimeContext:
        user = state.task.initiator_user_id
        return RuntimeContext(
            task=state.task,
            tier=state.cp.tier,
            user_id=user,
            permissions=self.permission_resolver(user),
        )

    def _recovery_available(self, state: _RunState) -> bool:
        return RoleName.RECOVERY in state.cp.active_roles

    def _verification_required(self, state: _RunState) -> bool:
        if RoleName.VERIFIER in state.cp.active_roles:
            return True
        if RoleName.VERIFIER in self.config.disabled_roles:
            return False
        return (
            state.cp.tier is Tier.STANDARD
            and state.plan is not None
            and bool(state.plan.critical_write_steps(self.catalog))
        )

    def _repair_needs_review(self, plan: Plan | None) -> bool:
        if plan is None:
            return False
        return any(
            self.gateway.intent_risk(step) is RiskLevel.HIGH for step in plan.steps
        )

    def _latest_ticket(self, task_id: str) -> ApprovalTicket | None:
        tickets = self.gateway.pending_tickets(task_id)
        if tickets:
            return tickets[-1]
        rows = [ApprovalTicket.from_dict(t) for t in self.storage.list_tickets_for(task_id)]
        undecided_first = sorted(rows, key=lambda t: (t.consumed, -t.created_at, t.id))
        return undecided_first[0] if undecided_first else None

    def _outcome(self, state: _RunState, terminal: str) -> RunOutcome:
        result: dict = {}
        if terminal == "completed":
            for event in reversed(self.storage.events(state.task.id)):
                if event.name == "runner.completed":
                    result = dict(event.payload.get("result", {}))
                    break
        elif terminal == "failed":
            for event in reversed(self.storage.events(state.task.id)):
                if event.name == "runner.failed":
                    result = dict(event.payload)
                    break
        elif terminal == "pending_approval":
            ticket = self._latest_ticket(state.task.id)
            result = {"ticket_id": None if ticket is None else ticket.id}
        elif terminal == "blocked":
            for opinion in reversed(state.cp.opinions):
                if opinion.role is RoleName.ORCHESTRATOR and opinion.payload.get("kind") == "block":
                    result = dict(opinion.payload)
                    break
        return RunOutcome(
            task_id=state.task.id,
            terminal=terminal,
            phase=state.cp.phase,
            tier=state.cp.tier,
            result=result,
            meter=state.meter.to_dict(self.config),
            checkpoint_version=state.cp.version,
        )

    # --- resume support ------------------------------------------------------------------

    def _current_plan(self, cp: Checkpoint) -> Plan | None:
        for opinion in reversed(cp.opinions):
            if opinion.role is RoleName.RECOVERY:
                repair = opinion.payload.get("repair_plan")
                if repair is not None:
                    return Plan.from_dict(repair)
            if opinion.role is RoleName.WORKER:
                return Plan.from_dict(opinion.payload)
        return None

    def _results_from_events(self, task_id: str) -> list[ToolResult]:
        events = self.storage.events(task_id)
        start = 0
        for i, event in enumerate(events):
            if event.name == "runner.phase.changed" and event.payload.get("to") == "executing":
                start = i + 1
        results = []
        for event in events[start:]:
            if event.name == "gateway.intent.executed":
                results.append(ToolResult.from_dict(event.payload["result"]))
        return results

    def _reconcile(self, cp: Checkpoint) -> None:
        """Append any events a crash swallowed after their checkpoint persisted."""
        events = self.storage.events(cp.task_id)
        folded_tier = None
        folded_phase = "planning"
        critic_events = 0
        recovery_events = 0
        verifier_events = 0
        retro_events = 0
        completed_seen = False
        for event in events:
            if event.name == "runner.tier.selected":
                folded_tier = event.payload.get("tier")
            elif event.name == "runner.phase.changed":
                folded_phase = event.payload.get("to")
            elif event.name == "agent.critic.reviewed":
                critic_events += 1
            elif event.name == "agent.recovery.decided":
                recovery_events += 1
            elif event.name == "agent.verifier.checked":
                verifier_events += 1
            elif event.name == "agent.retrospector.reported":
                retro_events += 1
            elif event.name == "runner.completed":
                completed_seen = True

        if folded_tier != cp.tier.value:
            self._emit(
                cp.task_id,
                "runner.tier.selected",
                {
                    "tier": cp.tier.value,
                    "cause": "resume_reconciliation",
                    "changed": folded_tier is not None,
                    "risk": None,
                    "case": "resume_reconciliation",
                    "signals": None,
                },
            )
        critic_opinions = cp.opinions_for(RoleName.CRITIC)
        for round_index in range(critic_events, len(critic_opinions)):
            verdict = Verdict.from_dict(critic_opinions[round_index].payload)
            self._emit(
                cp.task_id,
                "agent.critic.reviewed",
                {
                    "round": round_index,
                    "verdict": verdict.verdict,
                    "confidence": verdict.confidence,
                    "findings": len(verdict.findings),
                    "soft_warning": verdict.soft_warning,
                    "auto_resolved": list(verdict.auto_resolved),
                    "cause": "resume_reconciliation",
                },
            )
        for round_index in range(recovery_events, len(cp.recovery_history)):
            entry = cp.recovery_history[round_index]
            self._emit(
                cp.task_id,
                "agent.recovery.decided",
                {
                    "round": round_index,
                    "decision": entry.get("decision"),
                    "notes": entry.get("notes", ""),
                    "cause": "resume_reconciliation",
                },
            )
        verifier_opinions = cp.opinions_for(RoleName.VERIFIER)
        for round_index in range(verifier_events, len(verifier_opinions)):
            report = VerifyReport.from_dict(verifier_opinions[round_index].payload)
            self._emit(
                cp.task_id,
                "agent.verifier.checked",
                {
                    "round": round_index,
                    "status": report.status,
                    "confidence": report.confidence,
                    "cause": "resume_reconciliation",
                },
            )
        if cp.retrospective is not None and retro_events == 0:
            self._emit(
                cp.task_id,
                "agent.retrospector.reported",
                {
                    "pattern_summary": cp.retrospective.get("pattern_summary", ""),
                    "skill_drafts": len(cp.retrospective.get("skill_drafts", ())),
                    "cause": "resume_reconciliation",
                },
            )
        if cp.phase in (Phase.RETROSPECTING, Phase.COMPLETED) and not completed_seen:
            self._emit(cp.task_id, "runner.completed", {"result": {}, "cause": "resume_reconciliation"})
        if folded_phase != cp.phase.value:
            self._emit(
                cp.task_id,
                "runner.phase.changed",
                {"from": folded_phase, "to": cp.phase.value, "cause": "resume_reconciliation"},
            )


# --- standalone trace validation -------------------------------------------------


def validate_trace(events: Sequence[Event]) -> list[str]:
    """Structural violations in one task's event list (empty when clean).

    Checks the published protocol: gapless sequence numbers, a tier
    selection first, legal phase moves, no real execution before a
    review approval at standard and higher, and result-before-retrospection
    ordering.
    """
    problems: list[str] = []
    if not events:
        return ["trace is empty"]
    for i, event in enumerate(events, start=1):
        if event.seq != i:
            problems.append(f"seq gap at position {i}: got {event.seq}")
            break
    if events[0].name != "runner.tier.selected":
        problems.append(f"first event is {events[0].name}, not the tier selection")

    phase = "planning"
    tier = None
    approved = False
    review_waived = False
    completed_at = None
    retro_at = None
    allowed = {p.value: {q.value for q in TRANSITIONS[p]} for p in TRANSITIONS}
    for position, event in enumerate(events):
        if event.name == "runner.tier.selected":
            tier = event.payload.get("tier")
        elif event.name == "agent.critic.reviewed":
            if event.payload.get("verdict") == "approve":
                approved = True
        elif event.name == "runner.phase.changed":
            src = str(event.payload.get("from"))
            dst = str(event.payload.get("to"))
            cause = str(event.payload.get("cause"))
            if src != phase and cause != "resume_reconciliation":
                problems.append(f"event {position}: transition from {src} but phase was {phase}")
            if dst != "failed" and dst not in allowed.get(src, set()):
                problems.append(f"event {position}: illegal transition {src} -> {dst}")
            if src == "blocked" and dst == "executing" and cause not in ("override", "resume_reconciliation"):
                problems.append(f"event {position}: blocked released without an override")
            if src == "planning" and dst == "executing" and cause == "no_review_required":
                # the reviewer role is not in the active set, so the
                # approval gate legitimately does not apply to this trace
                review_waived = True
            if dst == "verifying" and tier == "light":
                problems.append(f"event {position}: light tier entered verification")
            phase = dst
        elif event.name == "gateway.intent.executed":
            result = event.payload.get("result", {})
            is_write = event.payload.get("tool") not in ("object.read", "object.search")
            if (
                tier in ("standard", "full")
                and is_write
                and not event.payload.get("memoized")
                and result.get("status") == "ok"
                and not approved
                and not review_waived
            ):
                problems.append(
                    f"event {position}: write executed before any review approval at tier {tier}"
                )
        elif event.name == "runner.completed":
            completed_at = position
        elif event.name == "agent.retrospector.reported":
            retro_at = position
    if completed_at is not None and retro_at is not None and retro_at < completed_at:
        problems.append("retrospection was reported before the result event")
    return problems
