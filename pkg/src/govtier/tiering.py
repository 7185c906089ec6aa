"""Risk scoring, tier selection, and the escalation/demotion policy.

Pure functions over immutable inputs. Tier changes observed mid-run are recorded
by the runner; nothing here touches storage or emits events.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Optional

from .model import RiskSignals, RoleName, Task, Tier, check_fields


class EscalationTrigger(str, Enum):
    WRITE_IN_LIGHT = "write_in_light"
    CRITIC_UNDISCLOSED_RISK = "critic_undisclosed_risk"
    SCOPE_EXPANSION = "scope_expansion"
    GATEWAY_MEDIUM_HIGH_RISK = "gateway_medium_high_risk"


class DemotionDenied(Exception):
    """Raised when a tier demotion request fails its policy guard."""

    def __init__(self, reason: str) -> None:
        super().__init__(f"demotion_denied: {reason}")
        self.reason = reason


@dataclass(frozen=True, slots=True)
class TierPolicy:
    """Routing weights and thresholds; weights must sum to 1."""

    w_op_type: float = 0.35
    w_obj_count: float = 0.25
    w_cross_domain: float = 0.25
    w_hist_fail: float = 0.15
    light_threshold: float = 0.25
    standard_threshold: float = 0.60
    object_count_cap: int = 100

    def __post_init__(self) -> None:
        total = self.w_op_type + self.w_obj_count + self.w_cross_domain + self.w_hist_fail
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"TierPolicy: weights must sum to 1, got {total}")
        if not 0.0 < self.light_threshold < self.standard_threshold < 1.0:
            raise ValueError("TierPolicy: thresholds must satisfy 0 < light < standard < 1")
        if self.object_count_cap <= 0:
            raise ValueError("TierPolicy: object_count_cap must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "w_op_type": self.w_op_type,
            "w_obj_count": self.w_obj_count,
            "w_cross_domain": self.w_cross_domain,
            "w_hist_fail": self.w_hist_fail,
            "light_threshold": self.light_threshold,
            "standard_threshold": self.standard_threshold,
            "object_count_cap": self.object_count_cap,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "TierPolicy":
        check_fields(record, "TierPolicy", [],
                     ["w_op_type", "w_obj_count", "w_cross_domain", "w_hist_fail",
                      "light_threshold", "standard_threshold", "object_count_cap"])
        defaults = cls()
        return cls(
            w_op_type=float(record.get("w_op_type", defaults.w_op_type)),
            w_obj_count=float(record.get("w_obj_count", defaults.w_obj_count)),
            w_cross_domain=float(record.get("w_cross_domain", defaults.w_cross_domain)),
            w_hist_fail=float(record.get("w_hist_fail", defaults.w_hist_fail)),
            light_threshold=float(record.get("light_threshold", defaults.light_threshold)),
            standard_threshold=float(record.get("standard_threshold", defaults.standard_threshold)),
            object_count_cap=int(record.get("object_count_cap", defaults.object_count_cap)),
        )


@dataclass(frozen=True, slots=True)
class TierDecision:
    """Selected tier plus the routing evidence that justifies it."""

    tier: Tier
    risk: float
    signals: RiskSignals
    case: str
    justification: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "tier": self.tier.value,
            "risk": self.risk,
            "signals": self.signals.to_dict(),
            "case": self.case,
            "justification": self.justification,
        }


def risk_score(signals: RiskSignals, policy: TierPolicy) -> float:
    """Weighted blend of the four routing signals; lands in [0, 1]."""
    return (policy.w_op_type * signals.op_type
            + policy.w_obj_count * signals.obj_count
            + policy.w_cross_domain * signals.cross_domain
            + policy.w_hist_fail * signals.hist_fail)


def select_tier(task: Task, risk: float, policy: TierPolicy,
                signals: Optional[RiskSignals] = None) -> TierDecision:
    """Route a task to a tier.

    Cases are ordered: light requires low risk AND a read AND a single-boundary
    scope; anything above the standard threshold goes full; everything else is
    standard. Writes therefore can never route light.
    """
    if not 0.0 <= risk <= 1.0:
        raise ValueError(f"risk must lie in [0, 1], got {risk}")
    signals = signals or RiskSignals(0.0, 0.0, 0, 0.0)
    if risk <= policy.light_threshold and not task.is_write and task.scope.single_boundary:
        tier, case = Tier.LIGHT, "low_risk_read_single_boundary"
        why = (f"risk {risk:.3f} <= {policy.light_threshold} with a read-only task "
               f"inside one brand boundary")
    elif risk > policy.standard_threshold:
        tier, case = Tier.FULL, "risk_above_standard_threshold"
        why = f"risk {risk:.3f} > {policy.standard_threshold}"
    else:
        tier, case = Tier.STANDARD, "default_review_band"
        why = (f"risk {risk:.3f} within the review band "
               f"(write={task.is_write}, single_boundary={task.scope.single_boundary})")
    return TierDecision(
        tier=tier, risk=risk, signals=signals, case=case,
        justification=f"{tier.value}: {why}; signals={signals.as_tuple()}")


@dataclass(frozen=True, slots=True)
class EscalationResult:
    tier: Tier
    changed: bool
    trigger: EscalationTrigger
    warning: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "tier": self.tier.value,
            "changed": self.changed,
            "trigger": self.trigger.value,
            "warning": self.warning,
        }


_NEXT_TIER = {Tier.LIGHT: Tier.STANDARD, Tier.STANDARD: Tier.FULL, Tier.FULL: Tier.FULL}


def escalate(current: Tier, trigger: EscalationTrigger) -> EscalationResult:
    """One-step monotone tier increase; at the top it degrades to a warning."""
    target = _NEXT_TIER[Tier(current)]
    if target is current:
        return EscalationResult(
            tier=current, changed=False, trigger=trigger,
            warning=f"already at {current.value}; trigger {trigger.value} recorded without effect")
    return EscalationResult(tier=target, changed=True, trigger=trigger)


_PREV_TIER = {Tier.FULL: Tier.STANDARD, Tier.STANDARD: Tier.LIGHT}


def demote(current: Tier, requester: RoleName,
           resolution_evidence: Mapping[str, Any],
           active_triggers: tuple[str, ...] = ()) -> Tier:
    """One-step tier decrease, orchestrator-only, with every trigger resolved.

    resolution_evidence maps trigger name -> 'resolved' (or a record whose
    'resolved' field is true) for each trigger still active on the task.
    """
    if RoleName(requester) is not RoleName.ORCHESTRATOR:
        raise DemotionDenied(f"requester {RoleName(requester).value} is not the orchestrator")
    current = Tier(current)
    if current is Tier.LIGHT:
        raise DemotionDenied("already at the lowest tier")
    for trigger in active_triggers:
        evidence = resolution_evidence.get(trigger)
        resolved = evidence == "resolved" or (
            isinstance(evidence, Mapping) and bool(evidence.get("resolved")))
        if not resolved:
            raise DemotionDenied(f"unresolved trigger {trigger}")
    return _PREV_TIER[current]
