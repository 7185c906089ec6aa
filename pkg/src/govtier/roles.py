"""Role agents: planning, review, verification, recovery, retrospection.

Each role has a narrow contract and its own identity fingerprint; the
planner can never approve its own plan, and the reviewer can only ask
for previews, never execute.  Scripted implementations draw their
outputs from a per-task scenario table so runs are reproducible; the
adapters in llm.py expose the same call shapes over a language model.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

from .catalog import ToolCatalog, payload_fingerprint
from .gateway import ToolIntent, ToolResult
from .model import (
    FailureHistory,
    Phase,
    RoleName,
    SuccessCriterion,
    Task,
    Tier,
    check_fields,
    derive_risk_signals,
)
from .tiering import TierDecision, TierPolicy, risk_score, select_tier

VERDICTS = ("approve", "revise", "reject", "ask_user", "escalate")
FINDING_CATEGORIES = (
    "scope_boundary", "permission", "missing_step", "risk_factor", "unsafe_payload",
)
VERIFY_STATUSES = ("passed", "incomplete", "failed", "uncertain")
RECOVERY_DECISIONS = ("retry", "replan", "ask_user", "wait", "fail")

# Confidence below which a blocking review verdict becomes a note instead.
SOFT_WARNING_CONFIDENCE = 0.6


class IntentUnclassifiable(Exception):
    """The request cannot be mapped to an operation; ask the user."""

    def __init__(self, question: str) -> None:
        super().__init__(question)
        self.question = question


class PlanningFailed(Exception):
    """The planner could not produce any plan for the task."""


# --- typed role outputs -----------------------------------------------------


@dataclass(frozen=True, slots=True)
class Plan:
    """Ordered tool steps plus the planner's disclosed caveats."""

    steps: tuple[ToolIntent, ...]
    assumptions: tuple[str, ...] = ()
    risk_annotations: tuple[tuple[int, str], ...] = ()
    user_input_flags: tuple[str, ...] = ()
    revision: int = 0

    def fingerprints(self, catalog: ToolCatalog) -> tuple[str, ...]:
        prints = []
        for step in self.steps:
            spec = catalog.spec(step.tool)
            if spec is not None:
                prints.append(payload_fingerprint(spec, step.payload))
        return tuple(prints)

    def write_steps(self, catalog: ToolCatalog) -> list[int]:
        out = []
        for i, step in enumerate(self.steps):
            spec = catalog.spec(step.tool)
            if spec is not None and spec.op_kind.value != "read":
                out.append(i)
        return out

    def critical_write_steps(self, catalog: ToolCatalog) -> list[int]:
        out = []
        for i, step in enumerate(self.steps):
            spec = catalog.spec(step.tool)
            if spec is not None and spec.op_kind.value in ("batch_write", "delete_irreversible"):
                out.append(i)
        return out

    def brands_touched(self, catalog: ToolCatalog) -> frozenset[str]:
        brands: set[str] = set()
        for step in self.steps:
            spec = catalog.spec(step.tool)
            if spec is None:
                continue
            for param, boundary in spec.scope_fields.items():
                if boundary != "brand":
                    continue
                value = step.payload.get(param)
                values = value if isinstance(value, list) else [value]
                brands.update(str(v) for v in values if v is not None)
        return frozenset(brands)

    def to_dict(self) -> dict:
        return {
            "steps": [s.to_dict() for s in self.steps],
            "assumptions": list(self.assumptions),
            "risk_annotations": [[i, note] for i, note in self.risk_annotations],
            "user_input_flags": list(self.user_input_flags),
            "revision": self.revision,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, object]) -> "Plan":
        check_fields(
            record,
            "Plan",
            required=("steps", "revision"),
            optional=("assumptions", "risk_annotations", "user_input_flags"),
        )
        return cls(
            steps=tuple(ToolIntent.from_dict(s) for s in record["steps"]),
            assumptions=tuple(str(a) for a in record.get("assumptions", ())),
            risk_annotations=tuple(
                (int(i), str(note)) for i, note in record.get("risk_annotations", ())
            ),
            user_input_flags=tuple(str(f) for f in record.get("user_input_flags", ())),
            revision=int(record["revision"]),
        )


@dataclass(frozen=True, slots=True)
class Finding:
    """One concrete objection a reviewer raises against a plan."""

    id: str
    category: str
    detail: str
    severity: str = "medium"
    step_index: int | None = None

    def __post_init__(self) -> None:
        if self.category not in FINDING_CATEGORIES:
            raise ValueError(f"unknown finding category {self.category!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "detail": self.detail,
            "severity": self.severity,
            "step_index": self.step_index,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, object]) -> "Finding":
        check_fields(
            record, "Finding", required=("id", "category", "detail"),
            optional=("severity", "step_index"),
        )
        idx = record.get("step_index")
        return cls(
            id=str(record["id"]),
            category=str(record["category"]),
            detail=str(record["detail"]),
            severity=str(record.get("severity", "medium")),
            step_index=None if idx is None else int(idx),
        )


@dataclass(frozen=True, slots=True)
class Verdict:
    """Reviewer output for one round."""

    verdict: str
    findings: tuple[Finding, ...] = ()
    confidence: float = 1.0
    notes: str = ""
    soft_warning: bool = False
    auto_resolved: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    @property
    def blocking(self) -> bool:
        return self.verdict in ("revise", "reject", "ask_user")

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "findings": [f.to_dict() for f in self.findings],
            "confidence": self.confidence,
            "notes": self.notes,
            "soft_warning": self.soft_warning,
            "auto_resolved": list(self.auto_resolved),
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, object]) -> "Verdict":
        check_fields(
            record, "Verdict", required=("verdict",),
            optional=("findings", "confidence", "notes", "soft_warning", "auto_resolved"),
        )
        return cls(
            verdict=str(record["verdict"]),
            findings=tuple(Finding.from_dict(f) for f in record.get("findings", ())),
            confidence=float(record.get("confidence", 1.0)),
            notes=str(record.get("notes", "")),
            soft_warning=bool(record.get("soft_warning", False)),
            auto_resolved=tuple(str(x) for x in record.get("auto_resolved", ())),
        )


@dataclass(frozen=True, slots=True)
class VerifyReport:
    """Evidence-backed check of the task's success criteria."""

    status: str
    criteria_results: tuple[dict, ...] = ()
    notes: str = ""
    confidence: float = 0.9

    def __post_init__(self) -> None:
        if self.status not in VERIFY_STATUSES:
            raise ValueError(f"unknown verify status {self.status!r}")

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "criteria_results": list(self.criteria_results),
            "notes": self.notes,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, object]) -> "VerifyReport":
        check_fields(
            record, "VerifyReport", required=("status",),
            optional=("criteria_results", "notes", "confidence"),
        )
        return cls(
            status=str(record["status"]),
            criteria_results=tuple(dict(r) for r in record.get("criteria_results", ())),
            notes=str(record.get("notes", "")),
            confidence=float(record.get("confidence", 0.9)),
        )


@dataclass(frozen=True, slots=True)
class RecoveryDecision:
    """How to respond to a failed or unverified execution."""

    decision: str
    repair_plan: Plan | None = None
    avoid: tuple[str, ...] = ()
    notes: str = ""
    wait_seconds: float = 0.0

    def __post_init__(self) -> None:
        if self.decision not in RECOVERY_DECISIONS:
            raise ValueError(f"unknown recovery decision {self.decision!r}")
        if self.decision in ("retry", "replan") and self.repair_plan is None:
            raise ValueError(f"{self.decision} requires a repair plan")

    def to_dict(self) -> dict:
        return {
            "decision": self.decision,
            "repair_plan": None if self.repair_plan is None else self.repair_plan.to_dict(),
            "avoid": list(self.avoid),
            "notes": self.notes,
            "wait_seconds": self.wait_seconds,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, object]) -> "RecoveryDecision":
        check_fields(
            record, "RecoveryDecision", required=("decision",),
            optional=("repair_plan", "avoid", "notes", "wait_seconds"),
        )
        plan = record.get("repair_plan")
        return cls(
            decision=str(record["decision"]),
            repair_plan=None if plan is None else Plan.from_dict(plan),
            avoid=tuple(str(x) for x in record.get("avoid", ())),
            notes=str(record.get("notes", "")),
            wait_seconds=float(record.get("wait_seconds", 0.0)),
        )


@dataclass(frozen=True, slots=True)
class RetroReport:
    """Post-task pattern summary; skill suggestions stay drafts."""

    pattern_summary: str
    outcome_memory: dict = field(default_factory=dict)
    skill_drafts: tuple[dict, ...] = ()
    notes: str = ""

    def __post_init__(self) -> None:
        for draft in self.skill_drafts:
            if draft.get("status") != "draft":
                raise ValueError("skill suggestions must carry status=draft")

    def to_dict(self) -> dict:
        return {
            "pattern_summary": self.pattern_summary,
            "outcome_memory": dict(self.outcome_memory),
            "skill_drafts": list(self.skill_drafts),
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, object]) -> "RetroReport":
        check_fields(
            record, "RetroReport", required=("pattern_summary",),
            optional=("outcome_memory", "skill_drafts", "notes"),
        )
        return cls(
            pattern_summary=str(record["pattern_summary"]),
            outcome_memory=dict(record.get("outcome_memory", {})),
            skill_drafts=tuple(dict(d) for d in record.get("skill_drafts", ())),
            notes=str(record.get("notes", "")),
        )


# --- tier-to-role mapping ----------------------------------------------------


def roles_for_tier(tier: Tier, disabled: frozenset[RoleName] = frozenset()) -> tuple[RoleName, ...]:
    """Active roles per tier; the retrospector always observes."""
    roles = [RoleName.ORCHESTRATOR, RoleName.WORKER]
    if tier in (Tier.STANDARD, Tier.FULL):
        roles.append(RoleName.CRITIC)
    if tier is Tier.FULL:
        roles.extend((RoleName.VERIFIER, RoleName.RECOVERY))
    roles.append(RoleName.RETROSPECTOR)
    return tuple(r for r in roles if r not in disabled)


@dataclass(frozen=True, slots=True)
class OrchestrationOutcome:
    decision: TierDecision
    active_roles: tuple[RoleName, ...]
    criteria: tuple[SuccessCriterion, ...]
    phase: Phase


def orchestrate(
    task: Task,
    history: FailureHistory,
    policy: TierPolicy,
    now: float,
    *,
    force_tier: Tier | None = None,
    disabled_roles: frozenset[RoleName] = frozenset(),
    scenario: Mapping[str, object] | None = None,
) -> OrchestrationOutcome:
    """Classify the task, pick its tier and roles, and fix success criteria."""
    scenario = scenario or {}
    if scenario.get("orchestrator_error"):
        raise IntentUnclassifiable(str(scenario["orchestrator_error"]))
    signals = derive_risk_signals(task, history, now=now, object_count_cap=policy.object_count_cap)
    decision = select_tier(task, risk_score(signals, policy), policy, signals=signals)
    if force_tier is not None and force_tier is not decision.tier:
        decision = TierDecision(
            tier=force_tier,
            risk=decision.risk,
            signals=decision.signals,
            case="forced_configuration",
            justification=f"tier pinned to {force_tier.value} by run configuration",
        )
    criteria = task.success_criteria or (
        SuccessCriterion(
            id="default-ok",
            description="every step reports success",
            check_kind="tool_result_flag",
            target={"flag": "ok", "value": True},
        ),
    )
    return OrchestrationOutcome(
        decision=decision,
        active_roles=roles_for_tier(decision.tier, disabled_roles),
        criteria=tuple(criteria),
        phase=Phase.PLANNING,
    )


# --- finding arbitration ------------------------------------------------------


def resolve_findings(
    findings: Sequence[Finding], constraints: Sequence[Mapping[str, object]]
) -> tuple[tuple[Finding, ...], tuple[str, ...]]:
    """Split findings into (unresolved, resolved ids) using stated constraints.

    A task constraint covers a finding when the finding's category is in
    the constraint's `covers` list and, if the constraint pins a
    `detail`, the details match exactly.
    """
    remaining: list[Finding] = []
    resolved: list[str] = []
    for finding in findings:
        covered = False
        for constraint in constraints:
            covers = constraint.get("covers", ())
            if finding.category not in covers:
                continue
            pinned = constraint.get("detail")
            if pinned is not None and pinned != finding.detail:
                continue
            covered = True
            break
        if covered:
            resolved.append(finding.id)
        else:
            remaining.append(finding)
    return tuple(remaining), tuple(resolved)


# --- criteria evaluation --------------------------------------------------------

PredicateRegistry = Mapping[str, Callable[[Sequence[ToolResult]], bool]]


def evaluate_criteria(
    criteria: Sequence[SuccessCriterion],
    results: Sequence[ToolResult],
    predicates: PredicateRegistry | None = None,
) -> tuple[str, list[dict]]:
    """Mechanical criteria check over execution results.

    Ambiguous evidence or an unevaluable predicate yields `uncertain`;
    an execution error or nothing met yields `failed`; a partial pass
    yields `incomplete`.
    """
    predicates = predicates or {}
    if any(r.ambiguity for r in results):
        rows = [
            {"criterion_id": c.id, "met": False, "evidence": "ambiguous execution evidence"}
            for c in criteria
        ]
        return "uncertain", rows

    rows: list[dict] = []
    unevaluable = False
    for criterion in criteria:
        met, evidence = _evaluate_one(criterion, results, predicates)
        if met is None:
            unevaluable = True
            met = False
        rows.append({"criterion_id": criterion.id, "met": met, "evidence": evidence})
    if unevaluable:
        return "uncertain", rows
    met_count = sum(1 for r in rows if r["met"])
    errored = any(r.status == "error" for r in results)
    if met_count == len(rows) and not errored:
        return "passed", rows
    if errored or met_count == 0:
        return "failed", rows
    return "incomplete", rows


def _evaluate_one(
    criterion: SuccessCriterion,
    results: Sequence[ToolResult],
    predicates: PredicateRegistry,
) -> tuple[bool | None, str]:
    target = criterion.target
    ok_results = [r for r in results if r.ok]
    if criterion.check_kind == "object_exists":
        wanted = str(target.get("object_id"))
        for i, r in enumerate(ok_results):
            data = r.data
            if str(data.get("object_id")) == wanted or wanted in [
                str(x) for x in data.get("object_ids", []) or []
            ]:
                return True, f"object {wanted} present in result {i}"
        return False, f"no result shows object {wanted}"
    if criterion.check_kind == "field_equals":
        wanted_id = str(target.get("object_id"))
        fname = str(target.get("field"))
        value = target.get("value")
        for i, r in enumerate(ok_results):
            data = r.data
            snapshot = data.get("object")
            if str(data.get("object_id")) == wanted_id and isinstance(snapshot, Mapping):
                if snapshot.get(fname) == value:
                    return True, f"result {i} shows {fname}={value!r} on {wanted_id}"
                return False, f"result {i} shows {fname}={snapshot.get(fname)!r} on {wanted_id}"
        return False, f"no snapshot of object {wanted_id} observed"
    if criterion.check_kind == "count_equals":
        wanted = int(target.get("count", 0))
        total = sum(int(r.data.get("affected_count", 0)) for r in ok_results)
        if total == wanted:
            return True, f"affected counts sum to {total}"
        return False, f"affected counts sum to {total}, wanted {wanted}"
    if criterion.check_kind == "tool_result_flag":
        flag = str(target.get("flag", "ok"))
        value = target.get("value", True)
        if not ok_results:
            return False, "no successful results to inspect"
        if all(r.data.get(flag, None) == value for r in ok_results):
            return True, f"all results report {flag}={value!r}"
        return False, f"some results lack {flag}={value!r}"
    if criterion.check_kind == "custom_predicate_id":
        pid = str(target.get("predicate_id"))
        fn = predicates.get(pid)
        if fn is None:
            return None, f"predicate {pid} is not registered"
        outcome = bool(fn(results))
        return outcome, f"predicate {pid} returned {outcome}"
    return None, f"unknown check kind {criterion.check_kind}"


# --- scripted role implementations ------------------------------------------------


def _plan_from_entry(
    entry: object, task: Task, revision: int
) -> Plan:
    if isinstance(entry, Mapping):
        steps = entry.get("steps", [])
        extras = {
            "assumptions": tuple(str(a) for a in entry.get("assumptions", ())),
            "risk_annotations": tuple(
                (int(i), str(n)) for i, n in entry.get("risk_annotations", ())
            ),
            "user_input_flags": tuple(str(f) for f in entry.get("user_input_flags", ())),
        }
    else:
        steps = entry
        extras = {"assumptions": (), "risk_annotations": (), "user_input_flags": ()}
    intents = tuple(
        ToolIntent(
            tool=str(step["tool"]),
            payload=dict(step["payload"]),
            role=RoleName.WORKER,
            task_id=task.id,
        )
        for step in steps
    )
    return Plan(steps=intents, revision=revision, **extras)


def default_plan(task: Task, revision: int = 0) -> Plan:
    """Plan derived from the task's own context when nothing is scripted."""
    ctx = task.context
    tenant = task.tenant_id
    brands = sorted(task.scope.brand_ids)
    brand = brands[0] if brands else ""
    object_ids = [str(x) for x in ctx.get("object_ids", [])]
    fields = dict(ctx.get("fields", {"status": "updated"}))
    kind = task.op_kind.value
    steps: list[ToolIntent] = []

    def intent(tool: str, payload: dict) -> ToolIntent:
        return ToolIntent(tool=tool, payload=payload, role=RoleName.WORKER, task_id=task.id)

    if kind == "read":
        if object_ids:
            for oid in object_ids:
                steps.append(
                    intent(
                        "object.read",
                        {"tenant_id": tenant, "brand_id": brand, "object_id": oid},
                    )
                )
        else:
            steps.append(
                intent(
                    "object.search",
                    {"tenant_id": tenant, "brand_id": brand, "query": task.goal[:80]},
                )
            )
    elif kind == "single_write":
        if not object_ids:
            raise PlanningFailed(f"task {task.id}: no object to write")
        steps.append(
            intent(
                "object.update",
                {
                    "tenant_id": tenant,
                    "brand_id": brand,
                    "object_id": object_ids[0],
                    "fields": fields,
                },
            )
        )
    elif kind == "batch_write":
        if not object_ids:
            raise PlanningFailed(f"task {task.id}: no objects to write")
        steps.append(
            intent(
                "object.batch_update",
                {
                    "tenant_id": tenant,
                    "brand_id": brand,
                    "object_ids": object_ids,
                    "fields": fields,
                },
            )
        )
    elif kind == "delete_irreversible":
        if not object_ids:
            raise PlanningFailed(f"task {task.id}: no object to delete")
        steps.append(
            intent(
                "object.delete",
                {"tenant_id": tenant, "brand_id": brand, "object_id": object_ids[0]},
            )
        )
    else:
        raise PlanningFailed(f"task {task.id}: unknown operation kind {kind}")
    return Plan(steps=tuple(steps), revision=revision)


class ScriptedWorker:
    """Planner that reads plans from the scenario, or derives a default."""

    fingerprint = "scripted:worker:v1"

    def __init__(self, scenario: Mapping[str, object], catalog: ToolCatalog) -> None:
        self._scenario = scenario or {}
        self._catalog = catalog

    def build_revision(self, task: Task, revision: int) -> Plan | None:
        plans = self._scenario.get("plans") or []
        if revision < len(plans):
            return _plan_from_entry(plans[revision], task, revision)
        return None

    def plan(self, task: Task, revision: int, findings: Sequence[Finding] = ()) -> Plan:
        scripted = self.build_revision(task, revision)
        if scripted is not None:
            return scripted
        if revision == 0:
            return default_plan(task)
        previous = self.build_revision(task, revision - 1)
        if previous is None:
            previous = default_plan(task, revision - 1)
        return self._auto_revise(previous, findings, revision)

    def _auto_revise(
        self, previous: Plan, findings: Sequence[Finding], revision: int
    ) -> Plan:
        # drop the steps objections point at; keep the rest unchanged
        flagged = {f.step_index for f in findings if f.step_index is not None}
        steps = tuple(s for i, s in enumerate(previous.steps) if i not in flagged)
        if not steps:
            raise PlanningFailed("revision removed every step; nothing left to run")
        return Plan(
            steps=steps,
            assumptions=previous.assumptions,
            user_input_flags=previous.user_input_flags,
            revision=revision,
        )


class ScriptedCritic:
    """Reviewer that follows the scenario script, else mechanical checks."""

    fingerprint = "scripted:critic:v1"

    def __init__(self, scenario: Mapping[str, object], catalog: ToolCatalog) -> None:
        self._scenario = scenario or {}
        self._catalog = catalog

    def review(
        self,
        task: Task,
        plan: Plan,
        tier: Tier,
        round: int,
        preview: Callable[[ToolIntent], ToolResult] | None = None,
    ) -> Verdict:
        by_tier = self._scenario.get("critic_by_tier") or {}
        script = by_tier.get(tier.value, self._scenario.get("critic"))
        if tier is Tier.FULL and preview is not None:
            # the deepest review level rehearses every step before judging it
            for step in plan.steps:
                preview(step)
        if script is None:
            verdict = self._heuristic(task, plan, tier)
        elif round < len(script):
            verdict = Verdict.from_dict(script[round])
        else:
            verdict = Verdict(verdict="approve", confidence=1.0, notes="no further objections")
        return finalize_verdict(verdict, task.constraints)

    def _heuristic(self, task: Task, plan: Plan, tier: Tier) -> Verdict:
        findings: list[Finding] = []
        seq = 0
        unsafe = self._scenario.get("unsafe_steps") or {}
        flagged = set(unsafe.get(str(plan.revision), ()))

        def add(category: str, detail: str, step_index: int | None, severity: str) -> None:
            nonlocal seq
            seq += 1
            findings.append(
                Finding(
                    id=f"f{seq}",
                    category=category,
                    detail=detail,
                    severity=severity,
                    step_index=step_index,
                )
            )

        for i, step in enumerate(plan.steps):
            if i in flagged:
                add("unsafe_payload", f"step {i} carries a payload the reviewer rejects", i, "high")
            spec = self._catalog.spec(step.tool)
            if spec is None:
                add("missing_step", f"step {i} uses unknown tool {step.tool}", i, "high")
                continue
            for param, boundary in spec.scope_fields.items():
                value = step.payload.get(param)
                values = value if isinstance(value, list) else [value]
                for item in values:
                    if boundary == "tenant" and item != task.scope.tenant_id:
                        add("scope_boundary", f"step {i} targets foreign tenant {item}", i, "high")
                    if boundary == "brand" and item not in task.scope.brand_ids:
                        add("scope_boundary", f"step {i} targets out-of-scope brand {item}", i, "high")
            if spec.op_kind.value == "delete_irreversible":
                add("risk_factor", f"step {i} deletes irreversibly", i, "medium")

        hard = [f for f in findings if f.category in ("scope_boundary", "permission", "unsafe_payload")]
        writes = plan.write_steps(self._catalog)
        if hard:
            return Verdict(verdict="revise", findings=tuple(findings), confidence=0.9)
        if tier is Tier.LIGHT and writes:
            return Verdict(
                verdict="escalate",
                findings=tuple(findings),
                confidence=0.9,
                notes="plan writes under a read-only review level",
            )
        notes = "reviewed with noted risks" if findings else ""
        return Verdict(verdict="approve", findings=tuple(findings), confidence=0.9, notes=notes)


def finalize_verdict(verdict: Verdict, constraints: Sequence[Mapping[str, object]]) -> Verdict:
    """Apply constraint arbitration, then the low-confidence soft-warning rule."""
    findings, resolved = resolve_findings(verdict.findings, constraints)
    out = verdict
    if resolved and not findings and verdict.blocking:
        out = Verdict(
            verdict="approve",
            findings=verdict.findings,
            confidence=verdict.confidence,
            notes=(verdict.notes + " all objections resolved by stated constraints").strip(),
            auto_resolved=resolved,
        )
    elif resolved:
        out = Verdict(
            verdict=verdict.verdict,
            findings=verdict.findings,
            confidence=verdict.confidence,
            notes=verdict.notes,
            auto_resolved=resolved,
        )
    if out.blocking and out.confidence < SOFT_WARNING_CONFIDENCE:
        out = Verdict(
            verdict="approve",
            findings=out.findings,
            confidence=out.confidence,
            notes=(out.notes + " low-confidence objection kept as a note").strip(),
            soft_warning=True,
            auto_resolved=out.auto_resolved,
        )
    return out


def _written_object_ids(result: "ToolResult") -> list[str]:
    """Object ids a successful write touched, from the result body."""
    if result.status != "ok":
        return []
    data = result.data
    if "object_ids" in data:
        return [str(x) for x in data.get("object_ids", ())]
    if data.get("affected_count") and "object_id" in data:
        return [str(data["object_id"])]
    return []


class ScriptedVerifier:
    """Checks success criteria against evidence, or follows the script."""

    fingerprint = "scripted:verifier:v1"

    def __init__(
        self,
        scenario: Mapping[str, object],
        predicates: PredicateRegistry | None = None,
    ) -> None:
        self._scenario = scenario or {}
        self._predicates = predicates or {}

    def verify(
        self,
        task: Task,
        criteria: Sequence[SuccessCriterion],
        results: Sequence[ToolResult],
        round: int,
        reread: Callable[[ToolIntent], ToolResult] | None = None,
    ) -> VerifyReport:
        script = self._scenario.get("verifier") or []
        entry: object = script[round] if round < len(script) else "auto"
        if reread is not None:
            self._confirm_writes(task, results, reread)
        status, rows = evaluate_criteria(criteria, results, self._predicates)
        if entry == "auto":
            confidence = 0.5 if status == "uncertain" else 0.9
            return VerifyReport(
                status=status, criteria_results=tuple(rows), confidence=confidence
            )
        record = dict(entry)
        record.setdefault("criteria_results", rows)
        return VerifyReport.from_dict(record)

    def _confirm_writes(
        self,
        task: Task,
        results: Sequence[ToolResult],
        reread: Callable[[ToolIntent], ToolResult],
    ) -> None:
        # confirmation reads are evidence-gathering only; criteria stay authoritative
        brand = min(task.scope.brand_ids) if task.scope.brand_ids else ""
        for result in results:
            touched = _written_object_ids(result)
            if not touched:
                continue
            # spot-check one object per write step
            reread(
                ToolIntent(
                    tool="object.read",
                    payload={
                        "object_id": touched[0],
                        "tenant_id": task.scope.tenant_id,
                        "brand_id": brand,
                    },
                    role=RoleName.VERIFIER,
                    task_id=task.id,
                )
            )


class ScriptedRecovery:
    """Chooses among retry, replan, wait, ask_user, and fail."""

    fingerprint = "scripted:recovery:v1"

    def __init__(
        self, scenario: Mapping[str, object], catalog: ToolCatalog, worker: ScriptedWorker
    ) -> None:
        self._scenario = scenario or {}
        self._catalog = catalog
        self._worker = worker

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
            return RecoveryDecision(
                decision="fail", notes="recovery budget exhausted", avoid=()
            )
        script = self._scenario.get("recovery") or []
        if round < len(script):
            decision = self._from_script(dict(script[round]), task, plan)
        else:
            decision = self._default(task, plan, results, report)
        self._assert_disjoint(decision, avoidance)
        return decision

    def _from_script(
        self, entry: dict, task: Task, plan: Plan
    ) -> RecoveryDecision:
        kind = str(entry.get("decision"))
        avoid = self._avoid_from_steps(plan, entry.get("avoid_steps", ()))
        if kind == "retry":
            return RecoveryDecision(decision="retry", repair_plan=plan, avoid=(), notes=str(entry.get("notes", "")))
        if kind == "replan":
            revision = int(entry["plan_revision"])
            repair = self._worker.build_revision(task, revision)
            if repair is None:
                raise PlanningFailed(f"scenario names plan revision {revision} that does not exist")
            return RecoveryDecision(
                decision="replan", repair_plan=repair, avoid=avoid, notes=str(entry.get("notes", ""))
            )
        if kind == "wait":
            return RecoveryDecision(
                decision="wait",
                repair_plan=plan,
                wait_seconds=float(entry.get("wait_seconds", 1.0)),
                notes=str(entry.get("notes", "")),
            )
        if kind == "ask_user":
            return RecoveryDecision(decision="ask_user", notes=str(entry.get("notes", "")))
        return RecoveryDecision(decision="fail", notes=str(entry.get("notes", "")), avoid=avoid)

    def _default(
        self,
        task: Task,
        plan: Plan,
        results: Sequence[ToolResult],
        report: VerifyReport | None,
    ) -> RecoveryDecision:
        errors = [r for r in results if r.status == "error"]
        last_error = errors[-1] if errors else None
        if last_error is not None and last_error.retry_eligible:
            wait = float(last_error.data.get("backoff_seconds", 0.0))
            if wait > 0:
                return RecoveryDecision(
                    decision="wait", repair_plan=plan, wait_seconds=wait,
                    notes="version conflict; retry after backoff",
                )
            return RecoveryDecision(decision="retry", repair_plan=plan, notes="transient failure")
        if report is not None and report.status == "uncertain":
            return RecoveryDecision(decision="retry", repair_plan=plan, notes="re-check uncertain evidence")
        repair = self._worker.build_revision(task, plan.revision + 1)
        if repair is not None:
            avoid = self._avoid_from_errors(plan, results)
            return RecoveryDecision(decision="replan", repair_plan=repair, avoid=avoid)
        return RecoveryDecision(decision="fail", notes="no viable repair available")

    def _avoid_from_steps(self, plan: Plan, indexes: Iterable[object]) -> tuple[str, ...]:
        prints = plan.fingerprints(self._catalog)
        out = []
        for raw in indexes:
            i = int(raw)
            if 0 <= i < len(prints):
                out.append(prints[i])
        return tuple(out)

    def _avoid_from_errors(
        self, plan: Plan, results: Sequence[ToolResult]
    ) -> tuple[str, ...]:
        prints = plan.fingerprints(self._catalog)
        out = []
        for i, r in enumerate(results):
            if r.status == "error" and not r.retry_eligible and i < len(prints):
                out.append(prints[i])
        return tuple(out)

    def _assert_disjoint(self, decision: RecoveryDecision, avoidance: Sequence[str]) -> None:
        if decision.repair_plan is None or decision.decision not in ("retry", "replan"):
            return
        blocked = set(avoidance) | (set(decision.avoid) if decision.decision == "replan" else set())
        overlap = set(decision.repair_plan.fingerprints(self._catalog)) & blocked
        if overlap:
            raise ValueError(
                f"repair plan repeats avoided payloads: {sorted(overlap)[:3]}"
            )


class ScriptedRetrospector:
    """Summarizes the finished run; suggestions never self-activate."""

    fingerprint = "scripted:retrospector:v1"

    def __init__(self, scenario: Mapping[str, object]) -> None:
        self._scenario = scenario or {}

    def retrospect(self, task: Task, checkpoint, events: Sequence) -> RetroReport:
        scripted = self._scenario.get("retro")
        tool_errors: dict[str, int] = {}
        executions = 0
        for event in events:
            if event.name != "gateway.intent.executed":
                continue
            executions += 1
            result = event.payload.get("result", {})
            if result.get("status") == "error":
                tool = str(event.payload.get("tool"))
                tool_errors[tool] = tool_errors.get(tool, 0) + 1
        if tool_errors:
            worst = max(sorted(tool_errors), key=lambda t: tool_errors[t])
            summary = f"{sum(tool_errors.values())} failed calls, most in {worst}"
        elif executions:
            summary = f"clean run with {executions} tool calls"
        else:
            summary = "no tool calls were made"
        drafts: tuple[dict, ...] = ()
        if isinstance(scripted, Mapping):
            summary = str(scripted.get("pattern_summary", summary))
            drafts = tuple(
                {**dict(d), "status": "draft"} for d in scripted.get("skill_drafts", ())
            )
        elif checkpoint.recovery_history:
            repaired = [h for h in checkpoint.recovery_history if h.get("decision") in ("retry", "replan")]
            if repaired and checkpoint.phase is Phase.COMPLETED:
                drafts = (
                    {
                        "name": f"repair-{task.op_kind.value}",
                        "body": f"when {task.op_kind.value} fails, {repaired[-1]['decision']} succeeded",
                        "status": "draft",
                    },
                )
        return RetroReport(
            pattern_summary=summary,
            outcome_memory={
                "terminal": checkpoint.phase.value,
                "tier": checkpoint.tier.value,
                "critic_rounds": len(checkpoint.opinions_for(RoleName.CRITIC)),
                "recovery_rounds": len(checkpoint.recovery_history),
                "executions": executions,
            },
            skill_drafts=drafts,
        )


@dataclass(frozen=True, slots=True)
class RoleTeam:
    """The per-task bundle of role implementations."""

    worker: ScriptedWorker
    critic: ScriptedCritic
    verifier: ScriptedVerifier
    recovery: ScriptedRecovery
    retrospector: ScriptedRetrospector

    def fingerprint_of(self, role: RoleName) -> str:
        member = {
            RoleName.WORKER: self.worker,
            RoleName.CRITIC: self.critic,
            RoleName.VERIFIER: self.verifier,
            RoleName.RECOVERY: self.recovery,
            RoleName.RETROSPECTOR: self.retrospector,
        }.get(role)
        return getattr(member, "fingerprint", "unknown")


def scripted_team(
    task: Task,
    scenario: Mapping[str, object] | None,
    catalog: ToolCatalog,
    predicates: PredicateRegistry | None = None,
) -> RoleTeam:
    scenario = scenario or {}
    worker = ScriptedWorker(scenario, catalog)
    return RoleTeam(
        worker=worker,
        critic=ScriptedCritic(scenario, catalog),
        verifier=ScriptedVerifier(scenario, predicates),
        recovery=ScriptedRecovery(scenario, catalog, worker),
        retrospector=ScriptedRetrospector(scenario),
    )
