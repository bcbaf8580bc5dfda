/** Shared types for the review UI. */

export type Decision = 'good' | 'bad';

export interface ReviewItem {
  sequence_id: string;
  frame_url: string;
  mask_url: string;
}

export interface Progress {
  total: number;
  done: number;
  good: number;
  bad: number;
}

export interface VerdictPost {
  sequence_id: string;
  decision: Decision;
  elapsed_ms: number;
}

/**
 * Everything the session needs from the outside world. The browser build
 * backs this with fetch against the review service; tests back it with an
 * in-memory fake.
 */
export interface Transport {
  fetchQueue(limit: number): Promise<ReviewItem[]>;
  postVerdict(verdict: VerdictPost): Promise<void>;
  fetchProgress(): Promise<Progress>;
  /** Warm the image cache so advancing to the next item is instant. */
  prefetchImage(url: string): void;
}

export interface Clock {
  now(): number;
}

export const systemClock: Clock = { now: () => Date.now() };
