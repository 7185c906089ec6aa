"""Command line front end: run tasks, serve the API, simulate, audit.

Every subcommand builds the same engine the HTTP service uses, so a
scenario driven here produces an identical event trace. Exit codes:
0 success, 1 domain failure (rejected decision, property violations,
replay divergence), 2 bad invocation or unreadable input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

from .config import AppConfig, load_config
from .engine import Engine
from .gateway import AuthorityError
from .model import Task
from .runner import RunOutcome, validate_trace
from .simlab import (
    CONFIGURATION_NAMES,
    BehaviorModel,
    WorkloadSpec,
    emit_report,
    generate_workload,
    load_calibration,
    run_all,
)
from .store import ReplayDivergence, StateConflict, replay


def _fail(message: str, code: int = 2) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_json(path: str) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _engine_from(args: argparse.Namespace) -> Engine:
    config = load_config(args.config)
    if getattr(args, "storage_root", None):
        config = dataclasses.replace(
            config, storage_backend="file", storage_root=args.storage_root
        )
    return config.build_engine()


def _print_outcome(outcome: RunOutcome) -> None:
    print(f"task:     {outcome.task_id}")
    print(f"terminal: {outcome.terminal}")
    print(f"tier:     {outcome.tier.value}")
    print(f"phase:    {outcome.phase.value}")
    if outcome.terminal == "pending_approval":
        print(f"ticket:   {outcome.result.get('ticket_id')}")
    elif outcome.result:
        print(f"result:   {json.dumps(outcome.result, sort_keys=True)[:200]}")
    meter = outcome.meter
    print(
        f"meter:    {meter.get('executions', 0)} executions, "
        f"{meter.get('simulated_seconds', 0.0):.1f}s simulated"
    )


def _print_trace(engine: Engine, task_id: str) -> None:
    print("trace:")
    for event in engine.trace(task_id):
        payload = json.dumps(event["payload"], sort_keys=True)
        if len(payload) > 120:
            payload = payload[:117] + "..."
        print(f"  {event['seq']:>3} {event['name']:<32} {payload}")


def cmd_run(args: argparse.Namespace) -> int:
    try:
        doc = _load_json(args.task_file)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(f"cannot read task file: {exc}")
    try:
        task = Task.from_dict(doc["task"] if "task" in doc else doc)
    except (KeyError, TypeError, ValueError) as exc:
        return _fail(f"invalid task document: {exc}")
    engine = _engine_from(args)
    objects = doc.get("objects", []) if isinstance(doc, Mapping) else []
    if objects:
        engine.seed_objects([dict(o) for o in objects])
    outcome = engine.submit(task, doc.get("scenario") if isinstance(doc, Mapping) else None)
    if args.json:
        print(json.dumps({
            "task_id": outcome.task_id,
            "terminal": outcome.terminal,
            "tier": outcome.tier.value,
            "phase": outcome.phase.value,
            "result": outcome.result,
            "meter": outcome.meter,
            "events": engine.trace(task.id),
        }, indent=2, sort_keys=True))
    else:
        _print_outcome(outcome)
        _print_trace(engine, task.id)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(load_config(args.config))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _spec_from_doc(doc: Mapping[str, Any], seed: int | None) -> tuple[WorkloadSpec, BehaviorModel]:
    spec = WorkloadSpec(**dict(doc.get("workload", {})))
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    behavior = BehaviorModel(**dict(doc.get("behavior", {})))
    return spec, behavior


def cmd_sim(args: argparse.Namespace) -> int:
    if args.spec_file:
        try:
            doc = _load_json(args.spec_file)
        except (OSError, json.JSONDecodeError) as exc:
            return _fail(f"cannot read simulation spec: {exc}")
    else:
        doc = load_calibration()
    try:
        spec, behavior = _spec_from_doc(doc, args.seed)
    except (TypeError, ValueError) as exc:
        return _fail(f"invalid simulation spec: {exc}")
    for name in args.configs:
        if name not in CONFIGURATION_NAMES:
            return _fail(f"unknown configuration {name!r}; pick from {CONFIGURATION_NAMES}")
    workload = generate_workload(spec, behavior)
    reports = run_all(
        workload,
        args.configs,
        calibration=doc,
        max_workers=args.max_workers,
        bootstrap_iterations=args.bootstrap,
    )
    paths = emit_report(list(reports.values()), args.out, include_tasks=args.include_tasks)
    for kind, path in sorted(paths.items()):
        print(f"{kind}: {path}")
    violations = [
        f"{report.config}: {message}"
        for report in reports.values()
        for message in report.violations
    ]
    for line in violations:
        print(f"violation: {line}", file=sys.stderr)
    if violations:
        return 1
    print(f"{len(reports)} configurations over {workload.spec.n_tasks} tasks: properties hold")
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    engine = _engine_from(args)
    if engine.storage.get_task(args.task_id) is None:
        return _fail(f"no task {args.task_id} in storage", 2)
    try:
        summary = replay(engine.storage, args.task_id)
    except ReplayDivergence as exc:
        print(f"replay divergence: {exc}", file=sys.stderr)
        return 1
    problems = validate_trace(engine.storage.events(args.task_id))
    for problem in problems:
        print(f"trace problem: {problem}", file=sys.stderr)
    if problems:
        return 1
    print(json.dumps(summary, indent=2, sort_keys=True))
    print("replay consistent")
    return 0


def _decide(args: argparse.Namespace, approve: bool) -> int:
    engine = _engine_from(args)
    try:
        outcome = engine.decide_approval(
            args.ticket_id, approve, args.operator, note=args.note
        )
    except LookupError as exc:
        return _fail(str(exc), 2)
    except StateConflict as exc:
        return _fail(str(exc), 1)
    except AuthorityError as exc:
        return _fail(str(exc), 1)
    _print_outcome(outcome)
    return 0


def cmd_approve(args: argparse.Namespace) -> int:
    return _decide(args, True)


def cmd_reject(args: argparse.Namespace) -> int:
    return _decide(args, False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="govtier",
        description="risk-tiered task runner: execute, serve, simulate, audit",
    )
    parser.add_argument("--config", help="path to a config JSON document")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one task file and print its trace")
    p_run.add_argument("task_file")
    p_run.add_argument("--storage-root", help="use file storage rooted here")
    p_run.add_argument("--json", action="store_true", help="machine-readable output")
    p_run.set_defaults(func=cmd_run)

    p_serve = sub.add_parser("serve", help="start the HTTP API")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.set_defaults(func=cmd_serve)

    p_sim = sub.add_parser("sim", help="run the simulation configurations")
    p_sim.add_argument("spec_file", nargs="?", help="simulation spec JSON (default: shipped)")
    p_sim.add_argument("--out", default="out", help="report output directory")
    p_sim.add_argument(
        "--configs", nargs="+", default=list(CONFIGURATION_NAMES),
        help="subset of configurations to run",
    )
    p_sim.add_argument("--seed", type=int, help="override the workload seed")
    p_sim.add_argument("--bootstrap", type=int, default=10000, help="bootstrap iterations")
    p_sim.add_argument("--max-workers", type=int, default=8)
    p_sim.add_argument("--include-tasks", action="store_true", help="per-task rows in JSON")
    p_sim.set_defaults(func=cmd_sim)

    p_replay = sub.add_parser("replay", help="audit one task's event log against its checkpoint")
    p_replay.add_argument("task_id")
    p_replay.add_argument("--storage-root", help="use file storage rooted here")
    p_replay.set_defaults(func=cmd_replay)

    for name, helptext in (("approve", "approve a pending ticket"),
                           ("reject", "reject a pending ticket")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("ticket_id")
        p.add_argument("--storage-root", help="use file storage rooted here")
        p.add_argument("--operator", default="demo-operator")
        p.add_argument("--note", default="")
        p.set_defaults(func=cmd_approve if name == "approve" else cmd_reject)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
