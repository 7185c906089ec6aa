"""Metric computation over simulated runs.

Success is judged against ground-truth postconditions in storage, never
against the runner's own verdict alone. Risk accounting is task-level: a task
counts as an unreviewed-risk event when at least one high-risk write actually
executed without any review gate, where a gate is either a reviewer approval
of the plan revision containing that payload or a decided approval ticket for
it. Recovery accounting divides repaired tasks by tasks that entered the
recovery phase at all.
"""

from __future__ import annotations

import random
import statistics
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from ..catalog import ToolCatalog, payload_fingerprint
from ..model import Checkpoint, RoleName
from ..store import ReplayDivergence, replay
from ..runner import validate_trace

RISK_RANK = {"low": 0, "medium": 1, "high": 2}
READ_TOOL_PREFIXES = ("object.read", "object.search")


def bootstrap_ci(
    successes: Sequence[float],
    b: int = 10000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval on the sample mean.

    Resamples the sample with replacement `b` times and reads the interval
    off the empirical distribution of resampled means.
    """
    if not successes:
        raise ValueError("bootstrap_ci needs a non-empty sample")
    if b <= 0:
        raise ValueError("iteration count must be positive")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    values = list(successes)
    n = len(values)
    rng = random.Random(seed)
    means = sorted(sum(rng.choices(values, k=n)) / n for _ in range(b))
    alpha = (1.0 - level) / 2.0
    lo_idx = int(alpha * (b - 1))
    hi_idx = int((1.0 - alpha) * (b - 1) + 0.5)
    return means[lo_idx], means[min(hi_idx, b - 1)]


@dataclass(frozen=True, slots=True)
class TaskRecord:
    """Everything measured about one task under one configuration."""

    task_id: str
    kind: str
    terminal: str
    tier: str
    succeeded: bool
    escalated: bool
    entered_recovery: bool
    repaired: bool
    risky_unreviewed: bool
    cost_units: float
    latency_seconds: float
    violations: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "kind": self.kind,
            "terminal": self.terminal,
            "tier": self.tier,
            "succeeded": self.succeeded,
            "escalated": self.escalated,
            "entered_recovery": self.entered_recovery,
            "repaired": self.repaired,
            "risky_unreviewed": self.risky_unreviewed,
            "cost_units": self.cost_units,
            "latency_seconds": self.latency_seconds,
            "violations": list(self.violations),
        }


@dataclass(frozen=True, slots=True)
class MetricReport:
    """Aggregate outcome of one configuration over one workload."""

    config: str
    n_tasks: int
    success_count: int
    success_rate: float
    success_ci: tuple[float, float]
    unreviewed_risk_count: int
    unreviewed_risk_rate: float
    unreviewed_risk_ci: tuple[float, float]
    recovery_entered: int
    recovery_repaired: int
    recovery_success_rate: float
    recovery_ci: tuple[float, float]
    mean_latency_seconds: float
    median_latency_seconds: float
    mean_cost_units: float
    total_cost_units: float
    escalation_rate: float
    tier_distribution: Mapping[str, float]
    terminal_counts: Mapping[str, int]
    violations: tuple[str, ...]
    per_task: tuple[TaskRecord, ...]

    def to_dict(self, include_tasks: bool = False) -> dict[str, Any]:
        out = {
            "config": self.config,
            "n_tasks": self.n_tasks,
            "success_count": self.success_count,
            "success_rate": self.success_rate,
            "success_ci": list(self.success_ci),
            "unreviewed_risk_count": self.unreviewed_risk_count,
            "unreviewed_risk_rate": self.unreviewed_risk_rate,
            "unreviewed_risk_ci": list(self.unreviewed_risk_ci),
            "recovery_entered": self.recovery_entered,
            "recovery_repaired": self.recovery_repaired,
            "recovery_success_rate": self.recovery_success_rate,
            "recovery_ci": list(self.recovery_ci),
            "mean_latency_seconds": self.mean_latency_seconds,
            "median_latency_seconds": self.median_latency_seconds,
            "mean_cost_units": self.mean_cost_units,
            "total_cost_units": self.total_cost_units,
            "escalation_rate": self.escalation_rate,
            "tier_distribution": dict(self.tier_distribution),
            "terminal_counts": dict(self.terminal_counts),
            "violations": list(self.violations),
        }
        if include_tasks:
            out["tasks"] = [t.to_dict() for t in self.per_task]
        return out


# --- per-task attribution ------------------------------------------------------


def approved_fingerprints(cp: Checkpoint, catalog: ToolCatalog) -> set[str]:
    """Payload fingerprints covered by some reviewer approval.

    Walks the opinion log in order, tracking the plan revision in force, and
    collects each revision's step fingerprints when a reviewer approves it.
    """
    current: tuple[str, ...] = ()
    approved: set[str] = set()
    for opinion in cp.opinions:
        if opinion.role is RoleName.WORKER and "steps" in opinion.payload:
            current = _step_fingerprints(opinion.payload["steps"], catalog)
        elif opinion.role is RoleName.RECOVERY:
            repair = opinion.payload.get("repair_plan")
            if isinstance(repair, Mapping) and "steps" in repair:
                current = _step_fingerprints(repair["steps"], catalog)
        elif opinion.role is RoleName.CRITIC:
            if opinion.payload.get("verdict") == "approve":
                approved.update(current)
    return approved


def ticket_fingerprints(storage: Any, catalog: ToolCatalog, task_id: str) -> set[str]:
    """Fingerprints of intents a decided approval ticket covered."""
    out: set[str] = set()
    for record in storage.list_tickets_for(task_id):
        if record.get("state") not in ("approved", "rejected"):
            continue
        intent = record.get("intent") or {}
        spec = catalog.spec(str(intent.get("tool", "")))
        if spec is None:
            continue
        out.add(payload_fingerprint(spec, intent.get("payload", {})))
    return out


def _step_fingerprints(steps: Iterable[Mapping[str, Any]], catalog: ToolCatalog) -> tuple[str, ...]:
    prints = []
    for step in steps:
        spec = catalog.spec(str(step.get("tool", "")))
        if spec is not None:
            prints.append(payload_fingerprint(spec, step.get("payload", {})))
    return tuple(prints)


def risky_unreviewed(
    events: Sequence[Any],
    cp: Checkpoint,
    storage: Any,
    catalog: ToolCatalog,
    marked_risky: frozenset[str],
) -> bool:
    """True when a high-risk write executed without any review gate.

    High risk means the gateway rated the intent medium or above, or the
    workload marked the payload as a known-unsafe write. Reads never count;
    memoized replays and failed attempts never count.
    """
    gated = approved_fingerprints(cp, catalog) | ticket_fingerprints(storage, catalog, cp.task_id)
    for event in events:
        if event.name != "gateway.intent.executed":
            continue
        payload = event.payload
        if payload.get("memoized"):
            continue
        result = payload.get("result") or {}
        if result.get("status") != "ok":
            continue
        tool = str(payload.get("tool", ""))
        if tool.startswith(READ_TOOL_PREFIXES):
            continue
        fingerprint = str(payload.get("fingerprint", ""))
        high = (
            RISK_RANK.get(str(payload.get("risk", "low")), 0) >= RISK_RANK["medium"]
            or fingerprint in marked_risky
        )
        if high and fingerprint not in gated:
            return True
    return False


def entered_recovery(events: Sequence[Any]) -> bool:
    return any(
        e.name == "runner.phase.changed" and e.payload.get("to") == "recovering"
        for e in events
    )


def was_escalated(events: Sequence[Any]) -> bool:
    return any(
        e.name == "runner.tier.selected"
        and e.payload.get("changed")
        and e.payload.get("cause") != "initial"
        for e in events
    )


def trace_violations(storage: Any, events: Sequence[Any], cp: Checkpoint) -> tuple[str, ...]:
    """Trace legality plus replay/checkpoint agreement for one finished task."""
    problems = list(validate_trace(events))
    try:
        folded = replay(storage, cp.task_id)
    except ReplayDivergence as exc:
        problems.append(f"replay diverged: {exc}")
    else:
        if folded["tier"] != cp.tier.value:
            problems.append(
                f"replay tier {folded['tier']} != checkpoint {cp.tier.value}"
            )
        if folded["phase"] != cp.phase.value:
            problems.append(
                f"replay phase {folded['phase']} != checkpoint {cp.phase.value}"
            )
    return tuple(problems)


# --- aggregation ----------------------------------------------------------------


def build_report(
    config: str,
    records: Sequence[TaskRecord],
    *,
    bootstrap_iterations: int = 10000,
    level: float = 0.95,
    seed: int = 0,
) -> MetricReport:
    """Fold per-task records into one report with bootstrap intervals."""
    if not records:
        raise ValueError("cannot report on an empty run")
    rows = sorted(records, key=lambda r: r.task_id)
    n = len(rows)
    successes = [1.0 if r.succeeded else 0.0 for r in rows]
    risky = [1.0 if r.risky_unreviewed else 0.0 for r in rows]
    repaired_rows = [1.0 if r.repaired else 0.0 for r in rows if r.entered_recovery]

    success_ci = bootstrap_ci(successes, bootstrap_iterations, level, seed=seed)
    risky_ci = bootstrap_ci(risky, bootstrap_iterations, level, seed=seed + 1)
    if repaired_rows:
        recovery_ci = bootstrap_ci(repaired_rows, bootstrap_iterations, level, seed=seed + 2)
        recovery_rate = sum(repaired_rows) / len(repaired_rows)
    else:
        recovery_ci = (0.0, 0.0)
        recovery_rate = 0.0

    latencies = [r.latency_seconds for r in rows]
    costs = [r.cost_units for r in rows]
    tiers: dict[str, int] = {}
    terminals: dict[str, int] = {}
    for r in rows:
        tiers[r.tier] = tiers.get(r.tier, 0) + 1
        terminals[r.terminal] = terminals.get(r.terminal, 0) + 1
    violations = tuple(
        f"{r.task_id}: {v}" for r in rows for v in r.violations
    )

    return MetricReport(
        config=config,
        n_tasks=n,
        success_count=int(sum(successes)),
        success_rate=sum(successes) / n,
        success_ci=success_ci,
        unreviewed_risk_count=int(sum(risky)),
        unreviewed_risk_rate=sum(risky) / n,
        unreviewed_risk_ci=risky_ci,
        recovery_entered=len(repaired_rows),
        recovery_repaired=int(sum(repaired_rows)),
        recovery_success_rate=recovery_rate,
        recovery_ci=recovery_ci,
        mean_latency_seconds=statistics.fmean(latencies),
        median_latency_seconds=statistics.median(latencies),
        mean_cost_units=statistics.fmean(costs),
        total_cost_units=sum(costs),
        escalation_rate=sum(1 for r in rows if r.escalated) / n,
        tier_distribution={t: c / n for t, c in sorted(tiers.items())},
        terminal_counts=dict(sorted(terminals.items())),
        violations=violations,
        per_task=tuple(rows),
    )
