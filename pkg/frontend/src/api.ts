/** HTTP transport against the review service API. */

import type { Progress, ReviewItem, Transport, VerdictPost } from './types';

export class HttpError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
  }
}

async function getJson<T>(url: string): Promise<T> {
  const res = await fetch(url);
  if (!res.ok) {
    throw new HttpError(res.status, `GET ${url} -> ${res.status}`);
  }
  return (await res.json()) as T;
}

export function createHttpTransport(baseUrl = ''): Transport {
  return {
    async fetchQueue(limit: number): Promise<ReviewItem[]> {
      const doc = await getJson<{ items: ReviewItem[] }>(`${baseUrl}/api/queue?limit=${limit}`);
      return doc.items;
    },

    async postVerdict(verdict: VerdictPost): Promise<void> {
      const res = await fetch(`${baseUrl}/api/verdicts`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify(verdict),
      });
      if (!res.ok) {
        throw new HttpError(res.status, `POST verdict -> ${res.status}`);
      }
    },

    async fetchProgress(): Promise<Progress> {
      return getJson<Progress>(`${baseUrl}/api/progress`);
    },

    prefetchImage(url: string): void {
      if (typeof Image !== 'undefined') {
        const img = new Image();
        img.src = baseUrl + url;
      }
    },
  };
}

/** Retry an async call with exponential backoff (for queue fetches). */
export async function withBackoff<T>(
  fn: () => Promise<T>,
  attempts = 4,
  baseDelayMs = 200,
  sleep: (ms: number) => Promise<void> = (ms) => new Promise((r) => setTimeout(r, ms)),
): Promise<T> {
  let lastError: unknown;
  for (let i = 0; i < attempts; i++) {
    try {
      return await fn();
    } catch (err) {
      lastError = err;
      if (i + 1 < attempts) {
        await sleep(baseDelayMs * 2 ** i);
      }
    }
  }
  throw lastError;
}
