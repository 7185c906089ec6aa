/** Polling loop: one cycle pulls the feed, task list, and pending approvals. */

import type { ApiClient } from "./api.js";
import {
  applyApprovals,
  applyFeed,
  applyTaskRows,
  markPoll,
  type ConsoleState,
} from "./state.js";

export const POLL_INTERVAL_MS = 1000;

export class Poller {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;

  constructor(
    private readonly client: ApiClient,
    private readonly state: ConsoleState,
    private readonly onChange: () => void,
    private readonly intervalMs: number = POLL_INTERVAL_MS,
  ) {}

  /** One poll cycle. Safe to call directly; the loop is just this on a timer. */
  async tick(): Promise<void> {
    try {
      const [feed, tasks, approvals] = await Promise.all([
        this.client.stream(this.state.cursor, 0),
        this.client.listTasks(),
        this.client.approvals("pending"),
      ]);
      applyFeed(this.state, feed.cursor, feed.events);
      applyTaskRows(this.state, tasks.tasks);
      applyApprovals(this.state, approvals.approvals);
      markPoll(this.state, true);
    } catch {
      markPoll(this.state, false);
    }
    this.onChange();
  }

  start(): void {
    this.stopped = false;
    const loop = async () => {
      if (this.stopped) return;
      await this.tick();
      if (this.stopped) return;
      this.timer = setTimeout(loop, this.intervalMs);
    };
    void loop();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }
}
