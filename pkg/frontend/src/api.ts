/** Typed client for the govtier HTTP API. All console traffic goes through here. */

export interface SessionInfo {
  user_id: string;
  permissions: string[];
  elevated: boolean;
}

export interface TaskRowDto {
  id: string;
  goal: string;
  op_kind: string;
  tier: string | null;
  phase: string;
  tenant_id: string;
}

export interface TraceEvent {
  seq: number;
  task_id: string;
  name: string;
  payload: Record<string, unknown>;
  timestamp: number;
}

export interface IntentDto {
  tool: string;
  payload: Record<string, unknown>;
  role: string;
  task_id: string;
  dry_run: boolean;
}

export interface ApprovalTicketDto {
  id: string;
  task_id: string;
  intent: IntentDto;
  intent_key: string;
  risk: string;
  rationale: string;
  state: "pending" | "approved" | "rejected";
  created_at: number;
  decided_by: string | null;
  decided_at: number | null;
  decision_note: string;
  consumed: boolean;
}

export interface TaskViewDto {
  task: Record<string, unknown> & { id: string };
  tier: string | null;
  phase: string;
  active_roles?: string[];
  checkpoint_version?: number;
  opinions?: Record<string, unknown>[];
  recovery_history?: Record<string, unknown>[];
  avoidance?: Record<string, unknown>[];
  verification?: Record<string, unknown> | null;
  retrospective?: Record<string, unknown> | null;
  tickets?: ApprovalTicketDto[];
  terminal?: string | null;
}

export interface OutcomeDto {
  task_id: string;
  terminal: string;
  phase: string;
  tier: string | null;
  result: Record<string, unknown> | null;
  meter: Record<string, unknown>;
  checkpoint_version: number;
}

export interface DecisionResponse {
  decision: string;
  outcome: OutcomeDto | null;
}

export interface FeedPage {
  cursor: number;
  events: TraceEvent[];
}

export interface SubmitResponse {
  task_id: string;
  status: string;
}

/** Error envelope the service returns: {"code": ..., "message": ...}. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly fetchImpl: FetchLike;

  constructor(
    public readonly baseUrl: string,
    private readonly token: string,
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const headers: Record<string, string> = {
      Authorization: `Bearer ${this.token}`,
      ...(init?.body ? { "Content-Type": "application/json" } : {}),
    };
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, { ...init, headers });
    } catch (err) {
      throw new ApiError(0, "unreachable", String(err));
    }
    if (!response.ok) {
      let code = "unknown_error";
      let message = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { code?: string; message?: string };
        if (body.code) code = body.code;
        if (body.message) message = body.message;
      } catch {
        // non-JSON error body; keep the fallback
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("/health");
  }

  session(): Promise<SessionInfo> {
    return this.request("/session");
  }

  listTasks(): Promise<{ tasks: TaskRowDto[] }> {
    return this.request("/tasks");
  }

  task(taskId: string): Promise<TaskViewDto> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}`);
  }

  trace(taskId: string): Promise<{ task_id: string; events: TraceEvent[] }> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}/trace`);
  }

  approvals(state: "pending" | "approved" | "rejected" | "all" = "pending"): Promise<{
    approvals: ApprovalTicketDto[];
  }> {
    return this.request(`/approvals?state=${state}`);
  }

  decide(ticketId: string, decision: "approve" | "reject", note = ""): Promise<DecisionResponse> {
    return this.request(`/approvals/${encodeURIComponent(ticketId)}/decision`, {
      method: "POST",
      body: JSON.stringify({ decision, note }),
    });
  }

  override(taskId: string, findingIds: string[]): Promise<DecisionResponse> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}/override`, {
      method: "POST",
      body: JSON.stringify({ finding_ids: findingIds }),
    });
  }

  submitTask(body: Record<string, unknown>): Promise<SubmitResponse> {
    return this.request("/tasks", { method: "POST", body: JSON.stringify(body) });
  }

  /** Long-poll the event feed. wait=0 returns immediately with whatever is new. */
  stream(after: number, wait = 0, limit = 500): Promise<FeedPage> {
    return this.request(`/events/stream?after=${after}&wait=${wait}&limit=${limit}`);
  }
}
