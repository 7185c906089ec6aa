/**
 * HTML renderers. Every function returns a markup string from plain data so
 * the view layer can be tested without a browser; main.ts owns the DOM.
 */

import type { ApprovalTicketDto, TraceEvent } from "./api.js";
import { isFailureEvent, type DerivedTask, type TierBadge } from "./state.js";

export function escapeHtml(value: unknown): string {
  return String(value)
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

/** Local time for the operator, full UTC instant on hover. */
export function renderTimestamp(epochSeconds: number): string {
  const date = new Date(epochSeconds * 1000);
  const utc = date.toISOString();
  return `<time datetime="${utc}" title="${utc}">${escapeHtml(date.toLocaleTimeString())}</time>`;
}

export function renderTierBadge(badge: TierBadge): string {
  const tier = escapeHtml(badge.tier);
  return `<span class="badge tier-${tier}" title="${escapeHtml(badge.cause)}">${tier}</span>`;
}

export function renderTaskRow(task: DerivedTask): string {
  const badges = task.tierBadges.map(renderTierBadge).join(" ");
  const outcome = task.outcome
    ? `<span class="outcome outcome-${task.outcome}">${task.outcome}</span>`
    : "";
  return (
    `<tr class="task-row" data-task="${escapeHtml(task.id)}">` +
    `<td class="task-id">${escapeHtml(task.id)}</td>` +
    `<td class="task-goal">${escapeHtml(task.goal)}</td>` +
    `<td class="task-tier">${badges}</td>` +
    `<td class="task-phase">${escapeHtml(task.phase)}</td>` +
    `<td class="task-outcome">${outcome}</td>` +
    `</tr>`
  );
}

export function renderTaskBoard(tasks: DerivedTask[]): string {
  if (tasks.length === 0) {
    return `<p class="empty">no tasks yet</p>`;
  }
  const rows = tasks.map(renderTaskRow).join("");
  return (
    `<table class="task-board"><thead><tr>` +
    `<th>task</th><th>goal</th><th>tier</th><th>phase</th><th>outcome</th>` +
    `</tr></thead><tbody>${rows}</tbody></table>`
  );
}

function summarize(value: unknown): string {
  if (value === null || value === undefined) return "";
  if (typeof value === "string") return value;
  return JSON.stringify(value);
}

function eventLabel(event: TraceEvent): string {
  const p = event.payload;
  switch (event.name) {
    case "runner.tier.selected":
      return `tier ${summarize(p["tier"])} (${summarize(p["cause"])})`;
    case "runner.phase.changed":
      return `phase ${summarize(p["from"])} → ${summarize(p["to"])} (${summarize(p["cause"])})`;
    case "runner.completed":
      return "task completed";
    case "runner.failed":
      return `task failed: ${summarize(p["cause"])}`;
    case "runner.override.recorded":
      return `override recorded by ${summarize(p["user_id"] ?? p["operator"] ?? "operator")}`;
    case "agent.critic.reviewed":
      return `critic reviewed: ${summarize(p["verdict"] ?? p["summary"] ?? "")}`;
    case "agent.verifier.checked":
      return `verifier checked: ${summarize(p["status"] ?? p["summary"] ?? "")}`;
    case "agent.recovery.decided":
      return `recovery decided: ${summarize(p["decision"] ?? "")}`;
    case "agent.retrospector.reported":
      return "retrospective recorded";
    case "gateway.intent.executed": {
      const result = p["result"];
      const status =
        result && typeof result === "object"
          ? summarize((result as Record<string, unknown>)["status"])
          : "";
      const memoized = p["memoized"] === true ? " (replayed)" : "";
      return `tool ${summarize(p["tool"])}: ${status}${memoized}`;
    }
    case "gateway.approval.created":
      return `approval requested: ${summarize(p["ticket_id"] ?? p["id"] ?? "")}`;
    case "gateway.approval.decided":
      return `approval ${summarize(p["decision"] ?? p["state"] ?? "decided")}`;
    default:
      return event.name;
  }
}

function eventKind(event: TraceEvent): string {
  if (event.name === "runner.phase.changed") return "transition";
  if (event.name.startsWith("agent.")) return "opinion";
  if (event.name.startsWith("gateway.")) return "gateway";
  return "runner";
}

/**
 * One timeline entry per event, ordered by seq. Failures are regular entries
 * with the `failure` class: same prominence, distinct styling.
 */
export function renderTimelineEntry(event: TraceEvent): string {
  const classes = ["entry", `kind-${eventKind(event)}`];
  if (isFailureEvent(event)) classes.push("failure");
  return (
    `<li class="${classes.join(" ")}" data-seq="${event.seq}" data-event="${escapeHtml(event.name)}">` +
    `<span class="seq">#${event.seq}</span> ` +
    renderTimestamp(event.timestamp) +
    ` <span class="label">${escapeHtml(eventLabel(event))}</span>` +
    `</li>`
  );
}

export function renderTimeline(events: TraceEvent[]): string {
  if (events.length === 0) {
    return `<p class="empty">no events yet</p>`;
  }
  const items = [...events]
    .sort((a, b) => a.seq - b.seq)
    .map(renderTimelineEntry)
    .join("");
  return `<ol class="timeline">${items}</ol>`;
}

export function renderApprovalCard(ticket: ApprovalTicketDto, canDecide: boolean): string {
  const payload = escapeHtml(JSON.stringify(ticket.intent.payload));
  const highRisk = ticket.risk === "high";
  const controls = canDecide
    ? `<div class="controls">` +
      `<button class="approve" data-ticket="${escapeHtml(ticket.id)}" data-confirm="${highRisk ? "1" : "0"}">approve</button>` +
      `<button class="reject" data-ticket="${escapeHtml(ticket.id)}" data-confirm="${highRisk ? "1" : "0"}">reject</button>` +
      `</div>`
    : `<p class="no-permission">read only: deciding approvals needs the approvals.decide permission</p>`;
  return (
    `<div class="approval-card risk-${escapeHtml(ticket.risk)}" data-ticket="${escapeHtml(ticket.id)}">` +
    `<h3>${escapeHtml(ticket.id)}</h3>` +
    `<p class="intent">tool <code>${escapeHtml(ticket.intent.tool)}</code> for task ` +
    `<code>${escapeHtml(ticket.task_id)}</code></p>` +
    `<pre class="payload">${payload}</pre>` +
    `<p class="risk">risk: <span class="badge risk-${escapeHtml(ticket.risk)}">${escapeHtml(ticket.risk)}</span></p>` +
    `<p class="rationale">${escapeHtml(ticket.rationale)}</p>` +
    controls +
    `</div>`
  );
}

export function renderApprovalQueue(tickets: ApprovalTicketDto[], canDecide: boolean): string {
  if (tickets.length === 0) {
    return `<p class="empty">no pending approvals</p>`;
  }
  return tickets.map((t) => renderApprovalCard(t, canDecide)).join("");
}

/** Override affordance: rendered only for elevated sessions on blocked tasks. */
export function renderOverrideControl(
  task: DerivedTask,
  elevated: boolean,
  findingIds: string[],
): string {
  if (!elevated || task.phase !== "blocked") return "";
  const ids = escapeHtml(JSON.stringify(findingIds));
  return (
    `<button class="override" data-task="${escapeHtml(task.id)}" data-findings="${ids}">` +
    `record override</button>`
  );
}

/** Skill drafts from the retrospective are listed read-only; review happens elsewhere. */
export function renderSkillDrafts(retrospective: Record<string, unknown> | null | undefined): string {
  const drafts = retrospective?.["skill_drafts"];
  if (!Array.isArray(drafts) || drafts.length === 0) return "";
  const items = drafts
    .map((d) => `<li class="draft">${escapeHtml(summarize(d))}</li>`)
    .join("");
  return `<ul class="skill-drafts" aria-readonly="true">${items}</ul>`;
}

export function renderBanner(connected: boolean, lastSync: number | null): string {
  if (connected) return "";
  const since = lastSync
    ? ` showing data from ${escapeHtml(new Date(lastSync).toLocaleTimeString())}`
    : "";
  return `<div class="banner offline">service unreachable; data may be stale;${since}</div>`;
}

/** Map a decision failure onto operator wording. */
export function decisionErrorMessage(status: number, code: string, message: string): string {
  if (status === 409) return "already decided";
  if (status === 403) return "not permitted";
  if (status === 404) return "ticket no longer exists";
  return `${code}: ${message}`;
}
