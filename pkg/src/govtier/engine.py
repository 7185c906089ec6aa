"""Application facade: wires storage, gateway, and runner into one engine.

The HTTP service, the CLI, and the simulation lab all talk to this
class; none of them construct runners or gateways directly.  The engine
also owns the failure-history ledger that feeds the risk signals and the
user-to-permission mapping used for tool calls and operator actions.
"""

from __future__ import annotations

import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

from .catalog import ToolCatalog, build_catalog
from .gateway import (
    APPROVAL_AUTHORITY,
    OVERRIDE_AUTHORITY,
    ApprovalTicket,
    Gateway,
    GatewayConfig,
)
from .model import TERMINAL_PHASES, FailureHistory, Phase, RoleName, Task, Tier
from .roles import PredicateRegistry, scripted_team
from .runner import Budget, Runner, RunnerConfig, RunOutcome, TeamFactory
from .store import MemoryStorage, Storage, replay
from .tiering import TierPolicy

DEFAULT_OBJECT_PERMISSIONS = frozenset(
    {"objects.read", "objects.write", "objects.delete"}
)
OPERATOR_PERMISSIONS = DEFAULT_OBJECT_PERMISSIONS | {
    APPROVAL_AUTHORITY,
    OVERRIDE_AUTHORITY,
}


@dataclass(frozen=True, slots=True)
class EngineSettings:
    """Everything tunable about one engine instance."""

    policy: TierPolicy = field(default_factory=TierPolicy)
    budget: Budget = field(default_factory=Budget)
    runner_config: RunnerConfig = field(default_factory=RunnerConfig)
    gateway_config: GatewayConfig = field(default_factory=GatewayConfig)
    record_history: bool = True
    users: Mapping[str, frozenset[str]] = field(default_factory=dict)


class Engine:
    """One tenant-visible deployment of the tiered runner."""

    def __init__(
        self,
        storage: Storage | None = None,
        *,
        catalog: ToolCatalog | None = None,
        settings: EngineSettings | None = None,
        team_factory: TeamFactory | None = None,
        predicates: PredicateRegistry | None = None,
        clock: Callable[[], float] | None = None,
        history: FailureHistory | None = None,
        after_commit: Callable[[str], None] | None = None,
        runner_id: str = "engine-runner",
    ) -> None:
        self.storage = storage if storage is not None else MemoryStorage()
        self.catalog = catalog if catalog is not None else build_catalog()
        self.settings = settings or EngineSettings()
        self.clock = clock or time.time
        self.history = history if history is not None else FailureHistory()
        self.predicates = predicates
        if team_factory is None:
            team_factory = lambda task, scenario, cat: scripted_team(  # noqa: E731
                task, scenario, cat, predicates
            )
        self.gateway = Gateway(
            self.storage,
            self.catalog,
            config=self.settings.gateway_config,
            clock=self.clock,
            after_commit=after_commit,
        )
        self.runner = Runner(
            self.storage,
            self.gateway,
            self.catalog,
            policy=self.settings.policy,
            budget=self.settings.budget,
            config=self.settings.runner_config,
            history=self.history,
            clock=self.clock,
            team_factory=team_factory,
            permission_resolver=self.permissions_for,
            runner_id=runner_id,
            after_commit=after_commit,
        )
        self._history_recorded: set[str] = set()

    # -- identity and permissions -------------------------------------------

    def permissions_for(self, user_id: str) -> frozenset[str]:
        configured = self.settings.users.get(user_id)
        if configured is not None:
            return frozenset(configured)
        return DEFAULT_OBJECT_PERMISSIONS

    def operator_permissions(self, user_id: str) -> frozenset[str]:
        configured = self.settings.users.get(user_id)
        if configured is not None:
            return frozenset(configured)
        return OPERATOR_PERMISSIONS

    # -- data seeding ----------------------------------------------------------

    def seed_objects(self, objects: Sequence[Mapping[str, object]]) -> None:
        for record in objects:
            self.storage.put_object(dict(record))

    # -- task lifecycle ----------------------------------------------------------

    def submit(
        self, task: Task, scenario: Mapping[str, object] | None = None
    ) -> RunOutcome:
        """Run a new task to its first stop (terminal, blocked, or held)."""
        outcome = self.runner.run(task, scenario)
        self._note_history(outcome)
        return outcome

    def resume(self, task_id: str) -> RunOutcome:
        outcome = self.runner.resume(task_id)
        self._note_history(outcome)
        return outcome

    def decide_approval(
        self,
        ticket_id: str,
        approve: bool,
        operator_id: str,
        note: str = "",
        *,
        resume: bool = True,
    ) -> RunOutcome | ApprovalTicket:
        """Record an approval decision, then drive the waiting task onward."""
        ticket = self.gateway.decide_approval(
            ticket_id,
            approve,
            operator_id,
            self.operator_permissions(operator_id),
            note=note,
        )
        if not resume:
            return ticket
        outcome = self.resume(ticket.task_id)
        return outcome

    def record_override(
        self,
        task_id: str,
        finding_ids: Sequence[str],
        operator_id: str,
        *,
        resume: bool = True,
    ) -> RunOutcome | dict:
        """Release a reviewer block with an elevated operator's sign-off."""
        record = self.gateway.override_block(
            task_id,
            finding_ids,
            operator_id,
            self.operator_permissions(operator_id),
        )
        if not resume:
            return record
        return self.resume(task_id)

    def _note_history(self, outcome: RunOutcome) -> None:
        if not self.settings.record_history:
            return
        if outcome.terminal not in ("completed", "failed"):
            return
        if outcome.task_id in self._history_recorded:
            return
        task = self.storage.get_task(outcome.task_id)
        if task is None:
            return
        self._history_recorded.add(outcome.task_id)
        self.history.record(task.category(), self.clock(), outcome.terminal == "failed")

    # -- read views ---------------------------------------------------------------

    def task_ids(self) -> list[str]:
        return self.storage.list_task_ids()

    def task_view(self, task_id: str) -> dict | None:
        """Checkpoint summary the console renders for one task."""
        cp = self.storage.load_checkpoint(task_id)
        task = self.storage.get_task(task_id)
        if cp is None or task is None:
            return None
        tickets = self.storage.list_tickets_for(task_id)
        return {
            "task": task.to_dict(),
            "tier": cp.tier.value,
            "phase": cp.phase.value,
            "active_roles": [r.value for r in cp.active_roles],
            "checkpoint_version": cp.version,
            "opinions": [o.to_dict() for o in cp.opinions],
            "recovery_history": [dict(e) for e in cp.recovery_history],
            "avoidance": list(cp.avoidance),
            "verification": cp.verification,
            "retrospective": cp.retrospective,
            "tickets": tickets,
            "terminal": cp.phase in TERMINAL_PHASES,
        }

    def list_tasks(self) -> list[dict]:
        rows = []
        for task_id in self.task_ids():
            cp = self.storage.load_checkpoint(task_id)
            task = self.storage.get_task(task_id)
            if task is None:
                continue
            rows.append(
                {
                    "id": task_id,
                    "goal": task.goal,
                    "op_kind": task.op_kind.value,
                    "tier": cp.tier.value if cp else None,
                    "phase": cp.phase.value if cp else "submitted",
                    "tenant_id": task.tenant_id,
                }
            )
        return rows

    def trace(self, task_id: str) -> list[dict]:
        return [e.to_dict() for e in self.storage.events(task_id)]

    def feed(self, after: int = 0, limit: int = 500) -> tuple[int, list[dict]]:
        cursor, events = self.storage.feed(after, limit)
        return cursor, [e.to_dict() for e in events]

    def pending_approvals(self) -> list[dict]:
        return [t.to_dict() for t in self.gateway.pending_tickets()]

    def audit(self, task_id: str) -> dict:
        """Fold the event log and cross-check it against the checkpoint."""
        return replay(self.storage, task_id)
