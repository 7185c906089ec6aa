/**
 * Client-side view state. Everything here is a pure fold over API responses:
 * the console never invents state, it only reconciles what the service said.
 *
 * Concurrency rule: seq is the ordering key. A feed page whose cursor does not
 * advance past the current one is discarded whole; per-task events are deduped
 * by seq so trace fetches and feed pages can overlap safely.
 */

import type { ApprovalTicketDto, SessionInfo, TaskRowDto, TraceEvent } from "./api.js";

export interface TaskRecord {
  id: string;
  goal: string;
  opKind: string;
  tenantId: string;
  /** tier/phase from the list snapshot; events take precedence once seen */
  rowTier: string | null;
  rowPhase: string | null;
  events: Map<number, TraceEvent>;
  maxSeq: number;
}

export interface ConsoleState {
  cursor: number;
  tasks: Map<string, TaskRecord>;
  approvals: Map<string, ApprovalTicketDto>;
  session: SessionInfo | null;
  /** false once a poll cycle fails; drives the connectivity banner */
  connected: boolean;
  /** ms epoch of the last successful poll, null before the first */
  lastSync: number | null;
}

export function newState(): ConsoleState {
  return {
    cursor: 0,
    tasks: new Map(),
    approvals: new Map(),
    session: null,
    connected: true,
    lastSync: null,
  };
}

function recordFor(state: ConsoleState, taskId: string): TaskRecord {
  let rec = state.tasks.get(taskId);
  if (!rec) {
    rec = {
      id: taskId,
      goal: "",
      opKind: "",
      tenantId: "",
      rowTier: null,
      rowPhase: null,
      events: new Map(),
      maxSeq: 0,
    };
    state.tasks.set(taskId, rec);
  }
  return rec;
}

function mergeEvents(rec: TaskRecord, events: TraceEvent[]): void {
  for (const event of events) {
    if (!rec.events.has(event.seq)) {
      rec.events.set(event.seq, event);
    }
    if (event.seq > rec.maxSeq) rec.maxSeq = event.seq;
  }
}

export function applySession(state: ConsoleState, session: SessionInfo): void {
  state.session = session;
}

export function applyTaskRows(state: ConsoleState, rows: TaskRowDto[]): void {
  for (const row of rows) {
    const rec = recordFor(state, row.id);
    rec.goal = row.goal;
    rec.opKind = row.op_kind;
    rec.tenantId = row.tenant_id;
    rec.rowTier = row.tier;
    rec.rowPhase = row.phase;
  }
}

/**
 * Fold one feed page in. Returns false (and changes nothing) when the page's
 * cursor does not advance the state: a late response from an older poll.
 */
export function applyFeed(state: ConsoleState, cursor: number, events: TraceEvent[]): boolean {
  if (cursor <= state.cursor) return false;
  for (const event of events) {
    mergeEvents(recordFor(state, event.task_id), [event]);
  }
  state.cursor = cursor;
  return true;
}

export function applyTrace(state: ConsoleState, taskId: string, events: TraceEvent[]): void {
  mergeEvents(recordFor(state, taskId), events);
}

export function applyApprovals(state: ConsoleState, tickets: ApprovalTicketDto[]): void {
  state.approvals = new Map(tickets.map((t) => [t.id, t]));
}

export function markPoll(state: ConsoleState, ok: boolean, now: number = Date.now()): void {
  state.connected = ok;
  if (ok) state.lastSync = now;
}

// --- derived views ------------------------------------------------------------------

export interface TierBadge {
  tier: string;
  cause: string;
}

export interface DerivedTask {
  id: string;
  goal: string;
  opKind: string;
  tenantId: string;
  /** one badge per effective tier; more than one means the task escalated */
  tierBadges: TierBadge[];
  phase: string;
  outcome: "completed" | "failed" | null;
  events: TraceEvent[];
  failureSeqs: number[];
}

function asString(value: unknown, fallback: string): string {
  return typeof value === "string" ? value : fallback;
}

export function isFailureEvent(event: TraceEvent): boolean {
  if (event.name === "runner.failed") return true;
  if (event.name === "runner.phase.changed") {
    return asString(event.payload["to"], "") === "failed";
  }
  if (event.name === "gateway.intent.executed") {
    const result = event.payload["result"];
    if (result && typeof result === "object") {
      return asString((result as Record<string, unknown>)["status"], "") === "error";
    }
  }
  return false;
}

export function deriveTask(rec: TaskRecord): DerivedTask {
  const events = [...rec.events.values()].sort((a, b) => a.seq - b.seq);
  const badges: TierBadge[] = [];
  let phase: string | null = null;
  let outcome: "completed" | "failed" | null = null;
  const failureSeqs: number[] = [];

  for (const event of events) {
    if (event.name === "runner.tier.selected") {
      const tier = asString(event.payload["tier"], "unknown");
      const cause = asString(event.payload["cause"], "initial");
      const last = badges[badges.length - 1];
      if (!last || last.tier !== tier) badges.push({ tier, cause });
    } else if (event.name === "runner.phase.changed") {
      phase = asString(event.payload["to"], phase ?? "planning");
    } else if (event.name === "runner.completed") {
      outcome = "completed";
    } else if (event.name === "runner.failed") {
      outcome = "failed";
    }
    if (isFailureEvent(event)) failureSeqs.push(event.seq);
  }

  if (badges.length === 0 && rec.rowTier) {
    badges.push({ tier: rec.rowTier, cause: "initial" });
  }
  return {
    id: rec.id,
    goal: rec.goal,
    opKind: rec.opKind,
    tenantId: rec.tenantId,
    tierBadges: badges,
    phase: phase ?? rec.rowPhase ?? "submitted",
    outcome,
    events,
    failureSeqs,
  };
}

export function deriveTasks(state: ConsoleState): DerivedTask[] {
  return [...state.tasks.values()]
    .map(deriveTask)
    .sort((a, b) => (a.id < b.id ? -1 : a.id > b.id ? 1 : 0));
}

export function pendingApprovals(state: ConsoleState): ApprovalTicketDto[] {
  return [...state.approvals.values()]
    .filter((t) => t.state === "pending")
    .sort((a, b) => a.created_at - b.created_at);
}

export function canDecide(state: ConsoleState): boolean {
  return state.session?.permissions.includes("approvals.decide") ?? false;
}

export function canOverride(state: ConsoleState): boolean {
  const s = state.session;
  return Boolean(s && s.elevated && s.permissions.includes("overrides.record"));
}
