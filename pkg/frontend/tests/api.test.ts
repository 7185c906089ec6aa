import { describe, expect, it } from "vitest";

import { ApiClient, ApiError, type FetchLike } from "../src/api.js";

interface Captured {
  url: string;
  method: string;
  headers: Record<string, string>;
  body: string | null;
}

function fakeFetch(status: number, payload: unknown): { fetch: FetchLike; calls: Captured[] } {
  const calls: Captured[] = [];
  const fetch: FetchLike = async (url, init) => {
    calls.push({
      url,
      method: init?.method ?? "GET",
      headers: (init?.headers ?? {}) as Record<string, string>,
      body: typeof init?.body === "string" ? init.body : null,
    });
    return new Response(JSON.stringify(payload), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };
  return { fetch, calls };
}

describe("request shaping", () => {
  it("sends the bearer token on every request", async () => {
    const { fetch, calls } = fakeFetch(200, { status: "ok" });
    const client = new ApiClient("http://x", "secret-token", fetch);
    await client.health();
    expect(calls[0]?.url).toBe("http://x/health");
    expect(calls[0]?.headers.Authorization).toBe("Bearer secret-token");
    expect(calls[0]?.method).toBe("GET");
  });

  it("posts decisions as JSON with the note", async () => {
    const { fetch, calls } = fakeFetch(200, { decision: "approve", outcome: null });
    const client = new ApiClient("http://x", "t", fetch);
    await client.decide("apt-1", "approve", "fine");
    expect(calls[0]?.url).toBe("http://x/approvals/apt-1/decision");
    expect(calls[0]?.method).toBe("POST");
    expect(calls[0]?.headers["Content-Type"]).toBe("application/json");
    expect(JSON.parse(calls[0]?.body ?? "")).toEqual({ decision: "approve", note: "fine" });
  });

  it("posts overrides with the finding ids", async () => {
    const { fetch, calls } = fakeFetch(200, { decision: "override", outcome: null });
    const client = new ApiClient("http://x", "t", fetch);
    await client.override("t1", ["f-1", "f-2"]);
    expect(calls[0]?.url).toBe("http://x/tasks/t1/override");
    expect(JSON.parse(calls[0]?.body ?? "")).toEqual({ finding_ids: ["f-1", "f-2"] });
  });

  it("builds the long poll query", async () => {
    const { fetch, calls } = fakeFetch(200, { cursor: 7, events: [] });
    const client = new ApiClient("http://x", "t", fetch);
    const page = await client.stream(7, 2.5, 100);
    expect(calls[0]?.url).toBe("http://x/events/stream?after=7&wait=2.5&limit=100");
    expect(page.cursor).toBe(7);
  });

  it("escapes path segments", async () => {
    const { fetch, calls } = fakeFetch(200, { task_id: "a/b", events: [] });
    const client = new ApiClient("http://x", "t", fetch);
    await client.trace("a/b");
    expect(calls[0]?.url).toBe("http://x/tasks/a%2Fb/trace");
  });
});

describe("error handling", () => {
  it("surfaces the service error envelope", async () => {
    const { fetch } = fakeFetch(409, { code: "ticket_not_pending", message: "already decided" });
    const client = new ApiClient("http://x", "t", fetch);
    const err = await client.decide("apt-1", "approve").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(409);
    expect((err as ApiError).code).toBe("ticket_not_pending");
  });

  it("wraps network failures as unreachable", async () => {
    const failing: FetchLike = async () => {
      throw new TypeError("connect ECONNREFUSED");
    };
    const client = new ApiClient("http://x", "t", failing);
    const err = await client.health().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(0);
    expect((err as ApiError).code).toBe("unreachable");
  });

  it("keeps a fallback for non JSON error bodies", async () => {
    const raw: FetchLike = async () => new Response("boom", { status: 500 });
    const client = new ApiClient("http://x", "t", raw);
    const err = await client.health().catch((e: unknown) => e);
    expect((err as ApiError).code).toBe("unknown_error");
    expect((err as ApiError).message).toBe("HTTP 500");
  });
});
