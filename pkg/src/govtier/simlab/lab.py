"""Run workloads through engine configurations and emit comparison reports.

Each task runs inside its own engine over private in-memory storage, so runs
are isolated, order-independent, and safe to spread over a bounded thread
pool. A small operator bot approves any held intents so the workload always
drains; the wall-clock of that human decision is exogenous and excluded from
simulated latency.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..engine import Engine, EngineSettings
from ..gateway import GatewayConfig
from ..model import FailureHistory, FailureRecord, RoleName, Tier
from ..runner import RunnerConfig
from .metrics import (
    MetricReport,
    TaskRecord,
    build_report,
    entered_recovery,
    risky_unreviewed,
    trace_violations,
    was_escalated,
)
from .workload import TaskBundle, Workload, load_calibration

CONFIGURATION_NAMES = (
    "dynamic",
    "single_agent",
    "static_full",
    "no_critic",
    "no_verifier",
    "no_recovery",
)

_APPROVAL_LOOP_LIMIT = 8
_OPERATOR = "sim-operator"


def settings_for(config: str, calibration: Mapping[str, Any] | None = None) -> EngineSettings:
    """Engine settings realizing one named run configuration."""
    calibration = calibration or load_calibration()
    runner = RunnerConfig(
        role_latency_seconds=float(calibration.get("role_latency_seconds", 2.0)),
        execution_latency_seconds=float(calibration.get("execution_latency_seconds", 1.0)),
    )
    gateway = GatewayConfig()
    if config == "dynamic":
        pass
    elif config == "single_agent":
        runner = RunnerConfig(
            force_tier=Tier.LIGHT,
            escalation_enabled=False,
            disabled_roles=frozenset({RoleName.CRITIC, RoleName.VERIFIER, RoleName.RECOVERY}),
            role_latency_seconds=runner.role_latency_seconds,
            execution_latency_seconds=runner.execution_latency_seconds,
        )
        gateway = GatewayConfig(risk_layer_enabled=False)
    elif config == "static_full":
        runner = RunnerConfig(
            force_tier=Tier.FULL,
            role_latency_seconds=runner.role_latency_seconds,
            execution_latency_seconds=runner.execution_latency_seconds,
        )
    elif config in ("no_critic", "no_verifier", "no_recovery"):
        role = {
            "no_critic": RoleName.CRITIC,
            "no_verifier": RoleName.VERIFIER,
            "no_recovery": RoleName.RECOVERY,
        }[config]
        runner = RunnerConfig(
            disabled_roles=frozenset({role}),
            role_latency_seconds=runner.role_latency_seconds,
            execution_latency_seconds=runner.execution_latency_seconds,
        )
    else:
        raise ValueError(f"unknown configuration {config!r}; expected one of {CONFIGURATION_NAMES}")
    return EngineSettings(runner_config=runner, gateway_config=gateway)


def _history_for(bundle: TaskBundle, now: float) -> FailureHistory:
    return FailureHistory(
        FailureRecord(category=c, timestamp=now - age, failed=failed)
        for c, age, failed in bundle.history
    )


def _cost_units(meters: Sequence[Mapping[str, Any]], weights: Mapping[str, float]) -> float:
    total = 0.0
    for meter in meters:
        for role, calls in meter.get("role_calls", {}).items():
            total += float(weights.get(role, 1.0)) * int(calls)
    return total


def _postconditions_met(storage: Any, bundle: TaskBundle) -> bool:
    for oid, wanted in bundle.expect_updated.items():
        record = storage.get_object(oid)
        if record is None:
            return False
        data = record.get("data", {})
        if any(data.get(k) != v for k, v in wanted.items()):
            return False
    for oid in bundle.expect_absent:
        if storage.get_object(oid) is not None:
            return False
    return True


def run_task(
    bundle: TaskBundle,
    config: str,
    calibration: Mapping[str, Any] | None = None,
) -> TaskRecord:
    """Drive one task to rest inside an isolated engine and measure it."""
    calibration = calibration or load_calibration()
    settings = settings_for(config, calibration)
    engine = Engine(settings=settings, history=_history_for(bundle, time.time()))
    engine.seed_objects(bundle.objects)

    meters: list[Mapping[str, Any]] = []
    outcome = engine.submit(bundle.task, bundle.scenario)
    meters.append(outcome.meter)
    for _ in range(_APPROVAL_LOOP_LIMIT):
        if outcome.terminal != "pending_approval":
            break
        held = [t for t in engine.pending_approvals() if t["task_id"] == bundle.task.id]
        if not held:
            break
        outcome = engine.decide_approval(held[0]["id"], True, _OPERATOR)
        meters.append(outcome.meter)

    events = engine.storage.events(bundle.task.id)
    cp = engine.storage.load_checkpoint(bundle.task.id)
    violations = list(trace_violations(engine.storage, events, cp))
    if outcome.terminal == "pending_approval":
        violations.append("approval loop did not drain the held intent")

    succeeded = outcome.terminal == "completed" and _postconditions_met(engine.storage, bundle)
    in_recovery = entered_recovery(events)
    weights = calibration.get("role_cost_units", {})
    return TaskRecord(
        task_id=bundle.task.id,
        kind=bundle.kind,
        terminal=outcome.terminal,
        tier=outcome.tier.value,
        succeeded=succeeded,
        escalated=was_escalated(events),
        entered_recovery=in_recovery,
        repaired=in_recovery and succeeded,
        risky_unreviewed=risky_unreviewed(
            events, cp, engine.storage, engine.catalog, bundle.risky_fingerprints
        ),
        cost_units=_cost_units(meters, weights),
        latency_seconds=sum(float(m.get("simulated_seconds", 0.0)) for m in meters),
        violations=tuple(violations),
    )


def run_configuration(
    config: str,
    workload: Workload,
    *,
    calibration: Mapping[str, Any] | None = None,
    max_workers: int = 8,
    bootstrap_iterations: int = 10000,
) -> MetricReport:
    """Execute every task in the workload under one configuration."""
    calibration = calibration or load_calibration()
    if max_workers < 1:
        raise ValueError("max_workers must be at least 1")
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        records = list(
            pool.map(lambda bundle: run_task(bundle, config, calibration), workload.bundles)
        )
    return build_report(
        config,
        records,
        bootstrap_iterations=bootstrap_iterations,
        seed=workload.spec.seed,
    )


def run_all(
    workload: Workload,
    configs: Sequence[str] = CONFIGURATION_NAMES,
    *,
    calibration: Mapping[str, Any] | None = None,
    max_workers: int = 8,
    bootstrap_iterations: int = 10000,
) -> dict[str, MetricReport]:
    calibration = calibration or load_calibration()
    return {
        name: run_configuration(
            name,
            workload,
            calibration=calibration,
            max_workers=max_workers,
            bootstrap_iterations=bootstrap_iterations,
        )
        for name in configs
    }


# --- report emission --------------------------------------------------------------


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def _ci(ci: tuple[float, float]) -> str:
    return f"[{_pct(ci[0])}, {_pct(ci[1])}]"


def comparison_markdown(reports: Sequence[MetricReport]) -> str:
    lines = [
        "# Configuration comparison",
        "",
        "| configuration | success % (95% CI) | unreviewed risk % | recovery repair % | "
        "mean latency s | median latency s | mean cost | escalations % |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for r in reports:
        lines.append(
            f"| {r.config} | {_pct(r.success_rate)} {_ci(r.success_ci)} "
            f"| {_pct(r.unreviewed_risk_rate)} "
            f"| {_pct(r.recovery_success_rate)} ({r.recovery_repaired}/{r.recovery_entered}) "
            f"| {r.mean_latency_seconds:.2f} | {r.median_latency_seconds:.2f} "
            f"| {r.mean_cost_units:.2f} | {_pct(r.escalation_rate)} |"
        )
    lines.append("")
    for r in reports:
        lines.append(f"## Tier distribution: {r.config}")
        lines.append("")
        lines.append("| tier | share % |")
        lines.append("|---|---|")
        for tier, share in r.tier_distribution.items():
            lines.append(f"| {tier} | {_pct(share)} |")
        lines.append("")
    all_violations = [v for r in reports for v in r.violations]
    lines.append(f"Trace property violations: {len(all_violations)}")
    for v in all_violations[:50]:
        lines.append(f"- {v}")
    lines.append("")
    return "\n".join(lines)


def emit_report(
    reports: Sequence[MetricReport],
    out_dir: str | Path,
    *,
    include_tasks: bool = False,
) -> dict[str, str]:
    """Write machine- and human-readable comparisons; returns written paths."""
    if not reports:
        raise ValueError("emit_report needs at least one report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "comparison.json"
    md_path = out / "comparison.md"
    payload = {
        "reports": [r.to_dict(include_tasks=include_tasks) for r in reports],
    }
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    md_path.write_text(comparison_markdown(reports), encoding="utf-8")
    return {"json": str(json_path), "markdown": str(md_path)}


def all_violations(reports: Sequence[MetricReport]) -> list[str]:
    return [f"{r.config}: {v}" for r in reports for v in r.violations]
