"""Tier-governed multi-agent task execution with a gated tool boundary.

Work enters as a task, gets routed to a governance tier by its risk signals,
and runs through a team of scoped roles. Every side effect passes through a
layered tool gateway; every state change lands in a durable checkpoint and an
append-only event trace that replays to the same answer.
"""

from .model import (
    Checkpoint,
    FailureHistory,
    FailureRecord,
    OpKind,
    Phase,
    RiskSignals,
    RoleName,
    ScopeDescriptor,
    SuccessCriterion,
    Task,
    Tier,
    derive_risk_signals,
)
from .tiering import (
    DemotionDenied,
    EscalationTrigger,
    TierPolicy,
    escalate,
    risk_score,
    select_tier,
)
from .catalog import ToolCatalog, ToolError, build_catalog, payload_fingerprint
from .gateway import (
    ApprovalTicket,
    Gateway,
    GatewayConfig,
    ToolIntent,
    ToolResult,
    idempotency_key,
)
from .store import FileStorage, MemoryStorage, ReplayDivergence, VersionConflict, replay
from .runner import Budget, Meter, Runner, RunnerConfig, RunOutcome, validate_trace
from .engine import Engine, EngineSettings
from .config import AppConfig, default_config, load_config

__version__ = "0.1.0"

__all__ = [
    "ApprovalTicket",
    "AppConfig",
    "Budget",
    "Checkpoint",
    "DemotionDenied",
    "Engine",
    "EngineSettings",
    "EscalationTrigger",
    "FailureHistory",
    "FailureRecord",
    "FileStorage",
    "Gateway",
    "GatewayConfig",
    "MemoryStorage",
    "Meter",
    "OpKind",
    "Phase",
    "ReplayDivergence",
    "RiskSignals",
    "RoleName",
    "Runner",
    "RunnerConfig",
    "RunOutcome",
    "ScopeDescriptor",
    "SuccessCriterion",
    "Task",
    "Tier",
    "TierPolicy",
    "ToolCatalog",
    "ToolError",
    "ToolIntent",
    "ToolResult",
    "VersionConflict",
    "build_catalog",
    "default_config",
    "derive_risk_signals",
    "escalate",
    "idempotency_key",
    "load_config",
    "payload_fingerprint",
    "replay",
    "risk_score",
    "select_tier",
    "validate_trace",
    "__version__",
]
