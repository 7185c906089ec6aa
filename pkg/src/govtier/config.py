"""Application configuration: storage choice, budgets, users, and tokens.

One JSON document configures the service and CLI.  Identity is a static
token map by design; permission semantics are enforced downstream by the
gateway, so this file only answers "who is calling".
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import RiskLevel
from .engine import Engine, EngineSettings
from .gateway import GatewayConfig
from .model import RoleName, Tier
from .runner import Budget, RunnerConfig
from .store import FileStorage, MemoryStorage, Storage
from .tiering import TierPolicy


@dataclass(frozen=True, slots=True)
class ApiSession:
    """Resolved identity of one authenticated caller."""

    user_id: str
    permissions: frozenset[str]
    elevated: bool

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "permissions": sorted(self.permissions),
            "elevated": self.elevated,
        }


@dataclass(frozen=True, slots=True)
class AppConfig:
    """Deserialized configuration document."""

    storage_backend: str = "memory"
    storage_root: str = ""
    policy: TierPolicy = field(default_factory=TierPolicy)
    budget: Budget = field(default_factory=Budget)
    runner: RunnerConfig = field(default_factory=RunnerConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    users: Mapping[str, frozenset[str]] = field(default_factory=dict)
    tokens: Mapping[str, str] = field(default_factory=dict)
    elevated_users: frozenset[str] = frozenset()
    record_history: bool = True

    def __post_init__(self) -> None:
        if self.storage_backend not in ("memory", "file"):
            raise ValueError(f"unknown storage backend {self.storage_backend!r}")
        if self.storage_backend == "file" and not self.storage_root:
            raise ValueError("file storage needs a storage_root path")

    def build_storage(self) -> Storage:
        if self.storage_backend == "file":
            return FileStorage(self.storage_root)
        return MemoryStorage()

    def engine_settings(self) -> EngineSettings:
        return EngineSettings(
            policy=self.policy,
            budget=self.budget,
            runner_config=self.runner,
            gateway_config=self.gateway,
            record_history=self.record_history,
            users=dict(self.users),
        )

    def build_engine(self, storage: Storage | None = None, **kwargs) -> Engine:
        return Engine(
            storage if storage is not None else self.build_storage(),
            settings=self.engine_settings(),
            **kwargs,
        )

    def session_for_token(self, token: str) -> ApiSession | None:
        user_id = self.tokens.get(token)
        if user_id is None:
            return None
        permissions = self.users.get(user_id)
        if permissions is None:
            permissions = frozenset({"objects.read", "objects.write", "objects.delete"})
        return ApiSession(
            user_id=user_id,
            permissions=frozenset(permissions),
            elevated=user_id in self.elevated_users,
        )


def _policy_from(record: Mapping[str, object]) -> TierPolicy:
    kwargs = {}
    for name in (
        "w_op_type",
        "w_obj_count",
        "w_cross_domain",
        "w_hist_fail",
        "light_threshold",
        "standard_threshold",
    ):
        if name in record:
            kwargs[name] = float(record[name])
    if "object_count_cap" in record:
        kwargs["object_count_cap"] = int(record["object_count_cap"])
    return TierPolicy(**kwargs)


def _budget_from(record: Mapping[str, object]) -> Budget:
    return Budget(
        critic_rounds=int(record.get("critic_rounds", 3)),
        recovery_rounds=int(record.get("recovery_rounds", 2)),
        wall_clock_ceiling=float(record.get("wall_clock_ceiling", 300.0)),
    )


def _runner_from(record: Mapping[str, object]) -> RunnerConfig:
    force = record.get("force_tier")
    disabled = frozenset(RoleName(r) for r in record.get("disabled_roles", ()))
    return RunnerConfig(
        force_tier=None if force is None else Tier(force),
        escalation_enabled=bool(record.get("escalation_enabled", True)),
        disabled_roles=disabled,
        role_latency_seconds=float(record.get("role_latency_seconds", 2.0)),
        execution_latency_seconds=float(record.get("execution_latency_seconds", 1.0)),
        retro_in_background=bool(record.get("retro_in_background", False)),
    )


def _gateway_from(record: Mapping[str, object]) -> GatewayConfig:
    return GatewayConfig(
        approval_threshold=RiskLevel(record.get("approval_threshold", "medium")),
        batch_escalation_threshold=int(record.get("batch_escalation_threshold", 10)),
        backoff_base_seconds=float(record.get("backoff_base_seconds", 0.1)),
        backoff_max_attempts=int(record.get("backoff_max_attempts", 5)),
        risk_layer_enabled=bool(record.get("risk_layer_enabled", True)),
    )


def config_from_dict(record: Mapping[str, object]) -> AppConfig:
    storage = dict(record.get("storage", {}))
    return AppConfig(
        storage_backend=str(storage.get("backend", "memory")),
        storage_root=str(storage.get("root", "")),
        policy=_policy_from(dict(record.get("policy", {}))),
        budget=_budget_from(dict(record.get("budget", {}))),
        runner=_runner_from(dict(record.get("runner", {}))),
        gateway=_gateway_from(dict(record.get("gateway", {}))),
        users={
            str(user): frozenset(str(p) for p in perms)
            for user, perms in dict(record.get("users", {})).items()
        },
        tokens={str(k): str(v) for k, v in dict(record.get("tokens", {})).items()},
        elevated_users=frozenset(str(u) for u in record.get("elevated_users", ())),
        record_history=bool(record.get("record_history", True)),
    )


def load_config(path: str | Path | None = None) -> AppConfig:
    """Read a config document, or produce the demo defaults when absent."""
    if path is None:
        return default_config()
    return config_from_dict(json.loads(Path(path).read_text()))


def default_config() -> AppConfig:
    """Batteries-included setup for local demos and tests."""
    return config_from_dict(
        {
            "users": {
                "demo-user": ["objects.read", "objects.write", "objects.delete"],
                "demo-operator": [
                    "objects.read",
                    "objects.write",
                    "objects.delete",
                    "approvals.decide",
                    "overrides.record",
                ],
            },
            "tokens": {
                "user-token": "demo-user",
                "operator-token": "demo-operator",
            },
            "elevated_users": ["demo-operator"],
        }
    )
