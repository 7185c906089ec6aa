"""HTTP surface over the engine: submission, traces, approvals, overrides.

Handlers are a thin projection: every state change maps 1:1 onto an
engine call, so a scenario driven through this API produces the same
event trace as the same scenario driven through the engine directly.
Identity is a static bearer-token map resolved by the app config; the
gateway still enforces the per-action permission checks underneath.
"""

from __future__ import annotations

import time
from concurrent.futures import Future, ThreadPoolExecutor
from contextlib import asynccontextmanager
from typing import Any, Mapping

from fastapi import Depends, FastAPI, Query, Request
from fastapi.responses import JSONResponse

from .config import ApiSession, AppConfig, default_config
from .engine import Engine
from .gateway import AuthorityError
from .model import Task
from .runner import RunOutcome
from .store import StateConflict

FEED_POLL_SECONDS = 0.05
MAX_WAIT_SECONDS = 30.0


class ApiError(Exception):
    """Machine-readable HTTP failure."""

    def __init__(self, status: int, code: str, message: str) -> None:
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _outcome_payload(outcome: RunOutcome) -> dict[str, Any]:
    return {
        "task_id": outcome.task_id,
        "terminal": outcome.terminal,
        "phase": outcome.phase.value,
        "tier": outcome.tier.value,
        "result": outcome.result,
        "meter": dict(outcome.meter),
        "checkpoint_version": outcome.checkpoint_version,
    }


class ServiceState:
    """Engine plus the background submission pool the API schedules onto."""

    def __init__(self, config: AppConfig, engine: Engine | None = None) -> None:
        self.config = config
        self.engine = engine if engine is not None else config.build_engine()
        self.pool = ThreadPoolExecutor(max_workers=4, thread_name_prefix="task-runner")
        self.runs: dict[str, Future] = {}

    def close(self) -> None:
        self.pool.shutdown(wait=True)

    def submit_async(self, task: Task, scenario: Mapping[str, Any] | None) -> None:
        self.runs[task.id] = self.pool.submit(self.engine.submit, task, scenario)


def create_app(config: AppConfig | None = None, engine: Engine | None = None) -> FastAPI:
    """Build the service; pass an engine to share storage with a caller."""
    state = ServiceState(config or default_config(), engine)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        state.close()

    app = FastAPI(title="tiered task runner", lifespan=lifespan)
    app.state.service = state

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message},
        )

    def auth(request: Request) -> ApiSession:
        header = request.headers.get("authorization", "")
        token = header.removeprefix("Bearer ").strip() if header else ""
        session = state.config.session_for_token(token) if token else None
        if session is None:
            raise ApiError(401, "unauthorized", "missing or unknown bearer token")
        return session

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/session")
    def whoami(session: ApiSession = Depends(auth)) -> dict:
        return session.to_dict()

    @app.post("/tasks", status_code=202)
    def submit_task(body: dict, session: ApiSession = Depends(auth)) -> dict:
        record = body.get("task")
        if not isinstance(record, Mapping):
            raise ApiError(400, "invalid_task", "body must carry a 'task' object")
        record = dict(record)
        record.setdefault("initiator_user_id", session.user_id)
        try:
            task = Task.from_dict(record)
        except (ValueError, TypeError, KeyError) as exc:
            raise ApiError(400, "invalid_task", str(exc)) from exc
        if task.id in state.runs or state.engine.storage.get_task(task.id) is not None:
            raise ApiError(409, "task_exists", f"task {task.id} was already submitted")
        objects = body.get("objects")
        if objects:
            state.engine.seed_objects([dict(o) for o in objects])
        scenario = body.get("scenario")
        state.submit_async(task, scenario)
        return {"task_id": task.id, "status": "accepted"}

    @app.get("/tasks")
    def list_tasks(session: ApiSession = Depends(auth)) -> dict:
        return {"tasks": state.engine.list_tasks()}

    @app.get("/tasks/{task_id}")
    def task_detail(task_id: str, session: ApiSession = Depends(auth)) -> dict:
        view = state.engine.task_view(task_id)
        if view is None:
            if task_id in state.runs:
                # accepted but the first checkpoint has not landed yet
                return {"task": {"id": task_id}, "phase": "submitted", "tier": None}
            raise ApiError(404, "unknown_task", f"no task {task_id}")
        return view

    @app.get("/tasks/{task_id}/trace")
    def task_trace(task_id: str, session: ApiSession = Depends(auth)) -> dict:
        events = state.engine.trace(task_id)
        if not events and state.engine.storage.get_task(task_id) is None:
            raise ApiError(404, "unknown_task", f"no task {task_id}")
        return {"task_id": task_id, "events": events}

    @app.get("/approvals")
    def list_approvals(
        state_filter: str | None = Query(default="pending", alias="state"),
        session: ApiSession = Depends(auth),
    ) -> dict:
        if state_filter in (None, "", "all"):
            tickets = state.engine.storage.list_tickets(None)
        elif state_filter in ("pending", "approved", "rejected"):
            tickets = state.engine.storage.list_tickets(state_filter)
        else:
            raise ApiError(400, "invalid_state", f"unknown ticket state {state_filter!r}")
        return {"approvals": tickets}

    @app.post("/approvals/{ticket_id}/decision")
    def decide(ticket_id: str, body: dict, session: ApiSession = Depends(auth)) -> dict:
        decision = body.get("decision")
        if decision not in ("approve", "reject"):
            raise ApiError(400, "invalid_decision", "decision must be approve or reject")
        note = str(body.get("note", ""))
        try:
            outcome = state.engine.decide_approval(
                ticket_id, decision == "approve", session.user_id, note=note
            )
        except LookupError as exc:
            raise ApiError(404, "unknown_ticket", str(exc)) from exc
        except StateConflict as exc:
            raise ApiError(409, "ticket_not_pending", str(exc)) from exc
        except AuthorityError as exc:
            raise ApiError(403, "missing_permission", str(exc)) from exc
        return {"decision": decision, "outcome": _outcome_payload(outcome)}

    @app.post("/tasks/{task_id}/override")
    def override(task_id: str, body: dict, session: ApiSession = Depends(auth)) -> dict:
        if not session.elevated:
            raise ApiError(403, "elevation_required", "override needs an elevated session")
        finding_ids = [str(f) for f in body.get("finding_ids", [])]
        try:
            outcome = state.engine.record_override(task_id, finding_ids, session.user_id)
        except LookupError as exc:
            raise ApiError(404, "unknown_task", str(exc)) from exc
        except StateConflict as exc:
            raise ApiError(409, "task_not_blocked", str(exc)) from exc
        except AuthorityError as exc:
            raise ApiError(403, "missing_permission", str(exc)) from exc
        return {"outcome": _outcome_payload(outcome)}

    @app.get("/events/stream")
    def event_stream(
        after: int = Query(default=0, ge=0),
        wait: float = Query(default=1.0, ge=0.0, le=MAX_WAIT_SECONDS),
        limit: int = Query(default=500, ge=1, le=2000),
        session: ApiSession = Depends(auth),
    ) -> dict:
        deadline = time.monotonic() + wait
        while True:
            cursor, events = state.engine.feed(after, limit)
            if events or time.monotonic() >= deadline:
                return {"cursor": cursor, "events": events}
            time.sleep(FEED_POLL_SECONDS)

    return app
