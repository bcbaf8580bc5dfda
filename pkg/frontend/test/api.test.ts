import { afterEach, describe, expect, it, vi } from 'vitest';

import { createHttpTransport, HttpError, withBackoff } from '../src/api';

afterEach(() => {
  vi.unstubAllGlobals();
});

function jsonResponse(doc: unknown, status = 200): Response {
  return new Response(JSON.stringify(doc), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

describe('http transport', () => {
  it('fetches queue items', async () => {
    const fetchMock = vi.fn().mockResolvedValue(
      jsonResponse({ items: [{ sequence_id: 'a', frame_url: '/f', mask_url: '/m' }] }),
    );
    vi.stubGlobal('fetch', fetchMock);
    const t = createHttpTransport('');
    const items = await t.fetchQueue(5);
    expect(fetchMock).toHaveBeenCalledWith('/api/queue?limit=5');
    expect(items[0]?.sequence_id).toBe('a');
  });

  it('posts verdicts as JSON and throws on rejection', async () => {
    const fetchMock = vi.fn().mockResolvedValue(new Response(null, { status: 204 }));
    vi.stubGlobal('fetch', fetchMock);
    const t = createHttpTransport('');
    await t.postVerdict({ sequence_id: 'a', decision: 'good', elapsed_ms: 5 });
    const [url, init] = fetchMock.mock.calls[0]!;
    expect(url).toBe('/api/verdicts');
    expect(JSON.parse((init as RequestInit).body as string).decision).toBe('good');

    fetchMock.mockResolvedValue(new Response(null, { status: 404 }));
    await expect(
      t.postVerdict({ sequence_id: 'ghost', decision: 'bad', elapsed_ms: 1 }),
    ).rejects.toBeInstanceOf(HttpError);
  });

  it('fetches progress', async () => {
    vi.stubGlobal(
      'fetch',
      vi.fn().mockResolvedValue(jsonResponse({ total: 3, done: 1, good: 1, bad: 0 })),
    );
    const t = createHttpTransport('');
    expect((await t.fetchProgress()).total).toBe(3);
  });
});

describe('withBackoff', () => {
  it('retries until success', async () => {
    let calls = 0;
    const out = await withBackoff(
      async () => {
        calls += 1;
        if (calls < 3) throw new Error('boom');
        return 'ok';
      },
      5,
      1,
      async () => {},
    );
    expect(out).toBe('ok');
    expect(calls).toBe(3);
  });

  it('rethrows after exhausting attempts', async () => {
    await expect(
      withBackoff(async () => {
        throw new Error('always');
      }, 3, 1, async () => {}),
    ).rejects.toThrow('always');
  });
});
