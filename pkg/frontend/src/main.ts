/** Browser entry point: wires the poller, renderers, and operator actions. */

import { ApiClient, ApiError } from "./api.js";
import { Poller } from "./poller.js";
import {
  applySession,
  applyTrace,
  canDecide,
  canOverride,
  deriveTask,
  deriveTasks,
  newState,
  pendingApprovals,
} from "./state.js";
import {
  decisionErrorMessage,
  renderApprovalQueue,
  renderBanner,
  renderOverrideControl,
  renderSkillDrafts,
  renderTaskBoard,
  renderTimeline,
} from "./render.js";

function resolveToken(): string {
  const fromUrl = new URLSearchParams(window.location.search).get("token");
  if (fromUrl) {
    localStorage.setItem("govtier-token", fromUrl);
    return fromUrl;
  }
  const stored = localStorage.getItem("govtier-token");
  if (stored) return stored;
  const entered = window.prompt("API token") ?? "";
  localStorage.setItem("govtier-token", entered);
  return entered;
}

function mount(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing mount point #${id}`);
  return el;
}

async function boot(): Promise<void> {
  const banner = mount("banner");
  const board = mount("board");
  const detail = mount("detail");
  const queue = mount("queue");
  const status = mount("status");
  const who = mount("who");

  const baseUrl = window.location.origin.startsWith("http")
    ? new URLSearchParams(window.location.search).get("api") ?? "http://127.0.0.1:8080"
    : "http://127.0.0.1:8080";
  const client = new ApiClient(baseUrl, resolveToken());
  const state = newState();
  let selectedTask: string | null = null;
  let detailExtra = "";

  const render = () => {
    banner.innerHTML = renderBanner(state.connected, state.lastSync);
    board.innerHTML = renderTaskBoard(deriveTasks(state));
    queue.innerHTML = renderApprovalQueue(pendingApprovals(state), canDecide(state));
    if (selectedTask) {
      const rec = state.tasks.get(selectedTask);
      const derived = rec ? deriveTask(rec) : null;
      detail.innerHTML = derived
        ? `<h2>${derived.id}</h2>` +
          renderTimeline(derived.events) +
          renderOverrideControl(derived, canOverride(state), []) +
          detailExtra
        : "";
    } else {
      detail.innerHTML = `<p class="empty">select a task to see its trace</p>`;
    }
  };

  const poller = new Poller(client, state, render);

  try {
    const session = await client.session();
    applySession(state, session);
    who.textContent = `${session.user_id}${session.elevated ? " (elevated)" : ""}`;
  } catch (err) {
    status.textContent = err instanceof ApiError ? err.message : String(err);
  }

  const selectTask = async (taskId: string) => {
    selectedTask = taskId;
    detailExtra = "";
    try {
      const [trace, view] = await Promise.all([client.trace(taskId), client.task(taskId)]);
      applyTrace(state, taskId, trace.events);
      detailExtra = renderSkillDrafts(view.retrospective);
    } catch (err) {
      status.textContent = err instanceof ApiError ? err.message : String(err);
    }
    render();
  };

  document.addEventListener("click", (raw) => {
    const target = raw.target as HTMLElement | null;
    if (!target) return;

    const row = target.closest<HTMLElement>(".task-row");
    if (row?.dataset.task) {
      void selectTask(row.dataset.task);
      return;
    }

    const decideButton = target.closest<HTMLButtonElement>("button.approve, button.reject");
    if (decideButton?.dataset.ticket) {
      const decision = decideButton.classList.contains("approve") ? "approve" : "reject";
      if (decideButton.dataset.confirm === "1" && !window.confirm(`${decision} this high risk intent?`)) {
        return;
      }
      client
        .decide(decideButton.dataset.ticket, decision)
        .then(() => {
          status.textContent = `${decision}d ${decideButton.dataset.ticket}`;
          return poller.tick();
        })
        .catch((err: unknown) => {
          status.textContent =
            err instanceof ApiError
              ? decisionErrorMessage(err.status, err.code, err.message)
              : String(err);
        });
      return;
    }

    const overrideButton = target.closest<HTMLButtonElement>("button.override");
    if (overrideButton?.dataset.task) {
      if (!window.confirm("record an override for this blocked task?")) return;
      const findings = JSON.parse(overrideButton.dataset.findings ?? "[]") as string[];
      client
        .override(overrideButton.dataset.task, findings)
        .then(() => poller.tick())
        .catch((err: unknown) => {
          status.textContent =
            err instanceof ApiError
              ? decisionErrorMessage(err.status, err.code, err.message)
              : String(err);
        });
    }
  });

  render();
  poller.start();
}

void boot();
