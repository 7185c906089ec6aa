"""Language-model adapters for the role interfaces.

Each adapter builds a role-specific prompt, calls a pluggable transport,
and parses a single fenced JSON object out of the reply.  A reply that
fails to parse is retried once; after that each role falls back to its
conservative output: the reviewer rejects, the checker reports
uncertain, recovery gives up, and the planner raises.
"""

from __future__ import annotations

import json
import re
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

from .catalog import ToolCatalog
from .gateway import ToolResult
from .model import SuccessCriterion, Task, Tier
from .roles import (
    Finding,
    Plan,
    PlanningFailed,
    RecoveryDecision,
    RetroReport,
    RoleTeam,
    Verdict,
    VerifyReport,
    finalize_verdict,
)

# messages -> reply text; swap in a real client or a test stub
Transport = Callable[[Sequence[Mapping[str, str]], str, float], str]

_FENCE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


@dataclass(frozen=True, slots=True)
class LlmConfig:
    model: str = "local-default"
    temperatures: Mapping[str, float] = field(
        default_factory=lambda: {
            "worker": 0.3,
            "critic": 0.0,
            "verifier": 0.0,
            "recovery": 0.1,
            "retrospector": 0.4,
        }
    )

    def temperature(self, role: str) -> float:
        return float(self.temperatures.get(role, 0.0))


def extract_json(text: str) -> dict | None:
    """First JSON object in the reply, fenced or bare."""
    match = _FENCE.search(text)
    candidates = [match.group(1)] if match else []
    start = text.find("{")
    if start >= 0:
        candidates.append(text[start:])
    for candidate in candidates:
        try:
            value, _ = json.JSONDecoder().raw_decode(candidate)
        except ValueError:
            continue
        if isinstance(value, dict):
            return value
    return None


class _LlmRole:
    def __init__(self, role: str, transport: Transport, config: LlmConfig) -> None:
        self._role = role
        self._transport = transport
        self._config = config
        self.fingerprint = f"llm:{role}:{config.model}:t{config.temperature(role)}"

    def _ask(self, system: str, body: Mapping[str, object]) -> dict | None:
        messages = [
            {"role": "system", "content": system},
            {"role": "user", "content": json.dumps(body, sort_keys=True)},
        ]
        for _ in range(2):  # one retry on an unparseable reply
            reply = self._transport(messages, self._config.model, self._config.temperature(self._role))
            parsed = extract_json(reply)
            if parsed is not None:
                return parsed
        return None


_PLAN_SYSTEM = (
    "You plan tool calls for one task. Reply with a single fenced JSON object: "
    '{"steps": [{"tool": str, "payload": object}], "assumptions": [str], '
    '"user_input_flags": [str]}. Use only the listed tools and stay inside the '
    "stated tenant and brand scope."
)

_CRITIC_SYSTEM = (
    "You review a proposed plan before anything runs. Reply with one fenced JSON "
    'object: {"verdict": "approve|revise|reject|ask_user|escalate", "findings": '
    '[{"id": str, "category": "scope_boundary|permission|missing_step|risk_factor", '
    '"detail": str, "step_index": int|null, "severity": "low|medium|high"}], '
    '"confidence": number, "notes": str}. Never execute anything.'
)

_VERIFIER_SYSTEM = (
    "You check declared success criteria against execution evidence. Reply with one "
    'fenced JSON object: {"status": "passed|incomplete|failed|uncertain", '
    '"criteria_results": [{"criterion_id": str, "met": bool, "evidence": str}], '
    '"confidence": number}. If the evidence is ambiguous, report uncertain.'
)

_RECOVERY_SYSTEM = (
    "You decide how to respond to a failed or unverified run. Reply with one fenced "
    'JSON object: {"decision": "retry|replan|ask_user|wait|fail", "steps": '
    '[{"tool": str, "payload": object}]|null, "avoid_steps": [int], "notes": str, '
    '"wait_seconds": number}. Do not repeat payloads listed as avoided.'
)

_RETRO_SYSTEM = (
    "You summarize a finished run. Reply with one fenced JSON object: "
    '{"pattern_summary": str, "skill_drafts": [{"name": str, "body": str}], '
    '"notes": str}. Suggestions are drafts for human review.'
)


class LlmWorker(_LlmRole):
    def __init__(self, transport: Transport, config: LlmConfig, catalog: ToolCatalog) -> None:
        super().__init__("worker", transport, config)
        self._catalog = catalog

    def build_revision(self, task: Task, revision: int) -> Plan | None:
        return None

    def plan(self, task: Task, revision: int, findings: Sequence[Finding] = ()) -> Plan:
        parsed = self._ask(
            _PLAN_SYSTEM,
            {
                "task": task.to_dict(),
                "revision": revision,
                "objections": [f.to_dict() for f in findings],
                "tools": [s.to_dict() for s in self._catalog.specs()],
            },
        )
        if parsed is None or not isinstance(parsed.get("steps"), list):
            raise PlanningFailed(f"task {task.id}: planner reply was not usable")
        from .roles import _plan_from_entry

        return _plan_from_entry(parsed, task, revision)


class LlmCritic(_LlmRole):
    def __init__(self, transport: Transport, config: LlmConfig, catalog: ToolCatalog) -> None:
        super().__init__("critic", transport, config)
        self._catalog = catalog

    def review(self, task: Task, plan: Plan, tier: Tier, round: int, preview=None) -> Verdict:
        parsed = self._ask(
            _CRITIC_SYSTEM,
            {"task": task.to_dict(), "plan": plan.to_dict(), "tier": tier.value, "round": round},
        )
        if parsed is None:
            verdict = Verdict(
                verdict="reject",
                confidence=1.0,
                notes="review reply unusable after retry; rejecting conservatively",
            )
        else:
            try:
                verdict = Verdict.from_dict(parsed)
            except (ValueError, KeyError, TypeError):
                verdict = Verdict(
                    verdict="reject", confidence=1.0, notes="review reply malformed"
                )
        return finalize_verdict(verdict, task.constraints)


class LlmVerifier(_LlmRole):
    def __init__(self, transport: Transport, config: LlmConfig) -> None:
        super().__init__("verifier", transport, config)

    def verify(
        self,
        task: Task,
        criteria: Sequence[SuccessCriterion],
        results: Sequence[ToolResult],
        round: int,
        reread=None,
    ) -> VerifyReport:
        parsed = self._ask(
            _VERIFIER_SYSTEM,
            {
                "criteria": [c.to_dict() for c in criteria],
                "results": [r.to_dict() for r in results],
                "round": round,
            },
        )
        if parsed is None:
            return VerifyReport(status="uncertain", notes="checker reply unusable", confidence=0.0)
        try:
            return VerifyReport.from_dict(parsed)
        except (ValueError, KeyError, TypeError):
            return VerifyReport(status="uncertain", notes="checker reply malformed", confidence=0.0)


class LlmRecovery(_LlmRole):
    def __init__(self, transport: Transport, config: LlmConfig, catalog: ToolCatalog) -> None:
        super().__init__("recovery", transport, config)
        self._catalog = catalog

    def decide(
        self,
        task: Task,
        plan: Plan,
        results: Sequence[ToolResult],
        report: VerifyReport | None,
        budget_remaining: int,
        avoidance: Sequence[str],
        round: int,
    ) -> RecoveryDecision:
        if budget_remaining <= 0:
            return RecoveryDecision(decision="fail", notes="recovery budget exhausted")
        parsed = self._ask(
            _RECOVERY_SYSTEM,
            {
                "plan": plan.to_dict(),
                "results": [r.to_dict() for r in results],
                "report": None if report is None else report.to_dict(),
                "avoided": list(avoidance),
                "budget_remaining": budget_remaining,
            },
        )
        if parsed is None:
            return RecoveryDecision(decision="fail", notes="recovery reply unusable")
        kind = str(parsed.get("decision", "fail"))
        if kind == "retry":
            return RecoveryDecision(decision="retry", repair_plan=plan, notes=str(parsed.get("notes", "")))
        if kind == "replan" and isinstance(parsed.get("steps"), list):
            from .roles import _plan_from_entry

            repair = _plan_from_entry({"steps": parsed["steps"]}, task, plan.revision + 1)
            overlap = set(repair.fingerprints(self._catalog)) & set(avoidance)
            if overlap:
                return RecoveryDecision(decision="fail", notes="proposed repair repeats avoided payloads")
            return RecoveryDecision(decision="replan", repair_plan=repair, notes=str(parsed.get("notes", "")))
        if kind == "wait":
            return RecoveryDecision(
                decision="wait", repair_plan=plan,
                wait_seconds=float(parsed.get("wait_seconds", 1.0)),
            )
        if kind == "ask_user":
            return RecoveryDecision(decision="ask_user", notes=str(parsed.get("notes", "")))
        return RecoveryDecision(decision="fail", notes=str(parsed.get("notes", "")))


class LlmRetrospector(_LlmRole):
    def __init__(self, transport: Transport, config: LlmConfig) -> None:
        super().__init__("retrospector", transport, config)

    def retrospect(self, task: Task, checkpoint, events: Sequence) -> RetroReport:
        parsed = self._ask(
            _RETRO_SYSTEM,
            {
                "task": task.to_dict(),
                "terminal": checkpoint.phase.value,
                "event_names": [e.name for e in events],
            },
        )
        if parsed is None:
            return RetroReport(pattern_summary="run summary unavailable")
        drafts = tuple(
            {**dict(d), "status": "draft"} for d in parsed.get("skill_drafts", ()) if isinstance(d, Mapping)
        )
        return RetroReport(
            pattern_summary=str(parsed.get("pattern_summary", "")),
            skill_drafts=drafts,
            notes=str(parsed.get("notes", "")),
        )


def llm_team(
    task: Task,
    scenario: Mapping[str, object] | None,
    catalog: ToolCatalog,
    transport: Transport,
    config: LlmConfig | None = None,
) -> RoleTeam:
    """Role bundle backed by a language model; scenario is ignored."""
    config = config or LlmConfig()
    return RoleTeam(
        worker=LlmWorker(transport, config, catalog),
        critic=LlmCritic(transport, config, catalog),
        verifier=LlmVerifier(transport, config),
        recovery=LlmRecovery(transport, config, catalog),
        retrospector=LlmRetrospector(transport, config),
    )
