"""Synthetic workload lab: generate task mixes, run ablation configurations, report metrics."""

from .workload import (
    BehaviorModel,
    TaskBundle,
    Workload,
    WorkloadSpec,
    default_behavior,
    default_workload_spec,
    generate_workload,
    largest_remainder,
    load_calibration,
)
from .metrics import (
    MetricReport,
    TaskRecord,
    bootstrap_ci,
    build_report,
)
from .lab import (
    CONFIGURATION_NAMES,
    emit_report,
    run_all,
    run_configuration,
    settings_for,
)

__all__ = [
    "BehaviorModel",
    "CONFIGURATION_NAMES",
    "MetricReport",
    "TaskBundle",
    "TaskRecord",
    "Workload",
    "WorkloadSpec",
    "bootstrap_ci",
    "build_report",
    "default_behavior",
    "default_workload_spec",
    "emit_report",
    "generate_workload",
    "largest_remainder",
    "load_calibration",
    "run_all",
    "run_configuration",
    "settings_for",
]
