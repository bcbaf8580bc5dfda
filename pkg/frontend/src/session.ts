/**
 * Review session state machine.
 *
 * Drives the whole triage flow independent of the DOM: batch fetching with
 * image prefetch, optimistic verdict submission with rollback, undo as a
 * local re-queue (the next decision becomes the correcting append), and
 * keystroke buffering while no item is on screen. Verdict posts go out
 * strictly one at a time in decision order, so the server log mirrors the
 * reviewer's actions.
 */

import { withBackoff } from './api';
import type { Clock, Decision, ReviewItem, Transport, VerdictPost } from './types';
import { systemClock } from './types';

export type Phase = 'loading' | 'reviewing' | 'complete';

export interface Counters {
  done: number;
  good: number;
  bad: number;
}

interface Submission {
  verdict: VerdictPost;
  item: ReviewItem;
}

export class ReviewSession {
  phase: Phase = 'loading';
  current: ReviewItem | null = null;
  counters: Counters = { done: 0, good: 0, bad: 0 };

  /** Server-acknowledged submissions, in order. */
  readonly eventLog: VerdictPost[] = [];

  private buffer: ReviewItem[] = [];
  private decidedIds = new Set<string>();
  private submissions: Submission[] = [];
  private history: Submission[] = [];
  private pendingKeys: Decision[] = [];
  private shownAt = 0;
  private pumping = false;
  private refilling: Promise<void> | null = null;
  private exhausted = false;
  private listeners: Array<() => void> = [];
  private queueBanner: string | null = null;
  private postBanner: string | null = null;

  /** The failure surfaced to the reviewer, if any (posts outrank fetches). */
  get banner(): string | null {
    return this.postBanner ?? this.queueBanner;
  }

  constructor(
    private readonly transport: Transport,
    private readonly batchSize = 8,
    private readonly clock: Clock = systemClock,
  ) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  /** Number of verdict posts not yet acknowledged by the server. */
  get inFlight(): number {
    return this.submissions.length;
  }

  async start(): Promise<void> {
    await this.advance();
    this.notify();
  }

  /** Handle a decision keystroke for the item on screen. */
  decide(decision: Decision): void {
    if (this.current === null) {
      if (this.phase !== 'complete') this.pendingKeys.push(decision);
      return;
    }
    const item = this.current;
    const elapsed = Math.max(0, Math.round(this.clock.now() - this.shownAt));
    const submission: Submission = {
      item,
      verdict: { sequence_id: item.sequence_id, decision, elapsed_ms: elapsed },
    };
    this.history.push(submission);
    this.decidedIds.add(item.sequence_id);
    this.counters.done += 1;
    this.counters[decision] += 1;
    this.submissions.push(submission);
    this.current = null;
    void this.advance().then(() => this.notify());
    void this.pump();
    this.notify();
  }

  /**
   * Undo: put the last decided item back on screen and roll the local
   * counters back. The re-decision that follows is appended to the log as
   * a correction; the original append is never removed.
   */
  undo(): void {
    const last = this.history.pop();
    if (!last) return;
    this.counters.done -= 1;
    this.counters[last.verdict.decision] -= 1;
    this.show(last.item);
    this.notify();
  }

  private show(item: ReviewItem): void {
    if (this.current !== null) this.buffer.unshift(this.current);
    this.current = item;
    this.shownAt = this.clock.now();
    this.phase = 'reviewing';
  }

  /** Move the next buffered item on screen, refilling/completing as needed. */
  private async advance(): Promise<void> {
    if (this.current !== null) return;
    if (this.buffer.length === 0) {
      await this.refillFresh();
    }
    const next = this.buffer.shift();
    if (next !== undefined) {
      this.show(next);
      const queuedKey = this.pendingKeys.shift();
      if (queuedKey !== undefined) {
        this.decide(queuedKey);
        return;
      }
      if (this.buffer.length < Math.max(1, Math.floor(this.batchSize / 2))) {
        void this.refillFresh().then(() => this.notify());
      }
      return;
    }
    if (this.exhausted && this.submissions.length === 0) {
      this.phase = 'complete';
    }
  }

  /**
   * Fetch more pending items, skipping everything already decided here.
   * Serialized: a caller always gets a fetch that STARTED after its call,
   * so the emptiness verdict is never based on a stale in-flight response.
   */
  private async refillFresh(): Promise<void> {
    while (this.refilling) {
      await this.refilling;
    }
    if (this.exhausted) return;
    this.refilling = this.fetchIntoBuffer();
    try {
      await this.refilling;
    } finally {
      this.refilling = null;
    }
  }

  private async fetchIntoBuffer(): Promise<void> {
    try {
      const items = await withBackoff(() => this.transport.fetchQueue(this.batchSize));
      this.queueBanner = null;
      const seen = new Set(this.buffer.map((i) => i.sequence_id));
      if (this.current) seen.add(this.current.sequence_id);
      const fresh = items.filter(
        (i) => !this.decidedIds.has(i.sequence_id) && !seen.has(i.sequence_id),
      );
      for (const item of fresh) {
        this.transport.prefetchImage(item.frame_url);
        this.transport.prefetchImage(item.mask_url);
      }
      this.buffer.push(...fresh);
      if (items.length === 0) {
        this.exhausted = true;
      }
    } catch (err) {
      this.queueBanner = `queue fetch failing, retrying (${String(err)})`;
    }
  }

  /** Serialize verdict posts: one in flight, FIFO, rollback on rejection. */
  private async pump(): Promise<void> {
    if (this.pumping) return;
    this.pumping = true;
    try {
      while (this.submissions.length > 0) {
        const sub = this.submissions[0]!;
        try {
          await this.transport.postVerdict(sub.verdict);
          this.submissions.shift();
          this.eventLog.push(sub.verdict);
          this.postBanner = null;
        } catch (err) {
          this.submissions.shift();
          this.rollback(sub, err);
        }
        this.notify();
      }
      if (this.current === null) {
        await this.advance();
        this.notify();
      }
    } finally {
      this.pumping = false;
    }
  }

  /** A rejected append: put the item back on screen, revert the counters. */
  private rollback(sub: Submission, err: unknown): void {
    this.counters.done -= 1;
    this.counters[sub.verdict.decision] -= 1;
    this.decidedIds.delete(sub.verdict.sequence_id);
    const idx = this.history.indexOf(sub);
    if (idx >= 0) this.history.splice(idx, 1);
    this.show(sub.item);
    this.postBanner = `verdict for ${sub.verdict.sequence_id} rejected, please re-decide (${String(err)})`;
  }
}
