import { describe, expect, it } from "vitest";

import type { ApprovalTicketDto, TraceEvent } from "../src/api.js";
import {
  applyApprovals,
  applyFeed,
  applySession,
  applyTaskRows,
  applyTrace,
  canDecide,
  canOverride,
  deriveTask,
  deriveTasks,
  markPoll,
  newState,
  pendingApprovals,
} from "../src/state.js";

let seqCounter = 0;

function event(
  taskId: string,
  name: string,
  payload: Record<string, unknown> = {},
  seq?: number,
): TraceEvent {
  seqCounter += 1;
  return {
    seq: seq ?? seqCounter,
    task_id: taskId,
    name,
    payload,
    timestamp: 1700000000 + seqCounter,
  };
}

function ticket(id: string, state: ApprovalTicketDto["state"], createdAt: number): ApprovalTicketDto {
  return {
    id,
    task_id: "t1",
    intent: { tool: "object.delete", payload: { object_id: "o1" }, role: "worker", task_id: "t1", dry_run: false },
    intent_key: `k-${id}`,
    risk: "high",
    rationale: "irreversible delete",
    state,
    created_at: createdAt,
    decided_by: null,
    decided_at: null,
    decision_note: "",
    consumed: false,
  };
}

describe("feed folding", () => {
  it("advances the cursor and stores events per task", () => {
    const state = newState();
    const applied = applyFeed(state, 2, [
      event("t1", "runner.tier.selected", { tier: "light", cause: "initial" }, 1),
      event("t1", "runner.phase.changed", { from: "planning", to: "executing", cause: "plan_ready" }, 2),
    ]);
    expect(applied).toBe(true);
    expect(state.cursor).toBe(2);
    expect(state.tasks.get("t1")?.events.size).toBe(2);
  });

  it("discards a whole page whose cursor does not advance", () => {
    const state = newState();
    applyFeed(state, 5, [event("t1", "runner.completed", {}, 3)]);
    const applied = applyFeed(state, 4, [event("t1", "runner.failed", { cause: "late" }, 2)]);
    expect(applied).toBe(false);
    expect(state.cursor).toBe(5);
    expect(state.tasks.get("t1")?.events.size).toBe(1);
  });

  it("dedupes events seen through both the trace and the feed", () => {
    const state = newState();
    const e = event("t1", "runner.tier.selected", { tier: "full", cause: "initial" }, 1);
    applyTrace(state, "t1", [e]);
    applyFeed(state, 1, [e]);
    expect(state.tasks.get("t1")?.events.size).toBe(1);
  });
});

describe("derived task views", () => {
  it("keeps one badge per effective tier with the escalation trigger as cause", () => {
    const state = newState();
    applyTrace(state, "t1", [
      event("t1", "runner.tier.selected", { tier: "standard", cause: "initial", changed: false }, 1),
      event("t1", "runner.tier.selected", { tier: "full", cause: "verifier_rejection", changed: true }, 2),
    ]);
    const derived = deriveTask(state.tasks.get("t1")!);
    expect(derived.tierBadges).toEqual([
      { tier: "standard", cause: "initial" },
      { tier: "full", cause: "verifier_rejection" },
    ]);
  });

  it("derives phase from the latest transition and outcome from terminal events", () => {
    const state = newState();
    applyTrace(state, "t1", [
      event("t1", "runner.phase.changed", { from: "planning", to: "executing" }, 1),
      event("t1", "runner.phase.changed", { from: "executing", to: "failed" }, 2),
      event("t1", "runner.failed", { cause: "tool_error" }, 3),
    ]);
    const derived = deriveTask(state.tasks.get("t1")!);
    expect(derived.phase).toBe("failed");
    expect(derived.outcome).toBe("failed");
    expect(derived.failureSeqs).toEqual([2, 3]);
  });

  it("marks error tool results as failures", () => {
    const state = newState();
    applyTrace(state, "t1", [
      event("t1", "gateway.intent.executed", { tool: "object.update", result: { status: "error", code: "scope_violation" } }, 1),
      event("t1", "gateway.intent.executed", { tool: "object.read", result: { status: "ok" } }, 2),
    ]);
    const derived = deriveTask(state.tasks.get("t1")!);
    expect(derived.failureSeqs).toEqual([1]);
  });

  it("lets event-derived phase win over a list snapshot", () => {
    const state = newState();
    applyTrace(state, "t1", [
      event("t1", "runner.phase.changed", { from: "executing", to: "verifying" }, 9),
    ]);
    applyTaskRows(state, [
      { id: "t1", goal: "g", op_kind: "single_write", tier: "full", phase: "executing", tenant_id: "acme" },
    ]);
    const derived = deriveTask(state.tasks.get("t1")!);
    expect(derived.phase).toBe("verifying");
    expect(derived.goal).toBe("g");
  });

  it("uses the list snapshot for tasks with no events yet", () => {
    const state = newState();
    applyTaskRows(state, [
      { id: "t2", goal: "fresh", op_kind: "read", tier: "light", phase: "planning", tenant_id: "acme" },
    ]);
    const derived = deriveTasks(state)[0]!;
    expect(derived.phase).toBe("planning");
    expect(derived.tierBadges).toEqual([{ tier: "light", cause: "initial" }]);
  });
});

describe("approvals and permissions", () => {
  it("filters decided tickets and sorts pending ones by creation time", () => {
    const state = newState();
    applyApprovals(state, [
      ticket("apt-2", "pending", 20),
      ticket("apt-1", "pending", 10),
      ticket("apt-0", "approved", 5),
    ]);
    expect(pendingApprovals(state).map((t) => t.id)).toEqual(["apt-1", "apt-2"]);
  });

  it("gates deciding on the approvals.decide permission", () => {
    const state = newState();
    expect(canDecide(state)).toBe(false);
    applySession(state, { user_id: "u", permissions: ["objects.read"], elevated: false });
    expect(canDecide(state)).toBe(false);
    applySession(state, { user_id: "op", permissions: ["approvals.decide"], elevated: false });
    expect(canDecide(state)).toBe(true);
  });

  it("gates overrides on elevation plus the overrides permission", () => {
    const state = newState();
    applySession(state, { user_id: "op", permissions: ["overrides.record"], elevated: false });
    expect(canOverride(state)).toBe(false);
    applySession(state, { user_id: "op", permissions: ["overrides.record"], elevated: true });
    expect(canOverride(state)).toBe(true);
    applySession(state, { user_id: "op", permissions: [], elevated: true });
    expect(canOverride(state)).toBe(false);
  });
});

describe("connectivity", () => {
  it("tracks poll failures for the banner and keeps the last sync time", () => {
    const state = newState();
    markPoll(state, true, 1000);
    expect(state.connected).toBe(true);
    expect(state.lastSync).toBe(1000);
    markPoll(state, false, 2000);
    expect(state.connected).toBe(false);
    expect(state.lastSync).toBe(1000);
  });
});
