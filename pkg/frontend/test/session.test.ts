import { describe, expect, it } from 'vitest';

import { ReviewSession } from '../src/session';
import { FakeServer, ids, settle } from './fake_transport';

async function startSession(server: FakeServer, batch = 5) {
  const session = new ReviewSession(server, batch);
  await session.start();
  await settle();
  return session;
}

describe('batch fetching and prefetch', () => {
  it('shows the first item and prefetches the batch images', async () => {
    const server = new FakeServer(ids(20));
    const session = await startSession(server);
    expect(session.current?.sequence_id).toBe('seq_00');
    expect(server.prefetched).toContain('/api/image/seq_00/frame/1');
    expect(server.prefetched).toContain('/api/image/seq_00/mask');
  });

  it('shows the complete screen with counts when the queue is empty', async () => {
    const server = new FakeServer([]);
    const session = await startSession(server);
    expect(session.phase).toBe('complete');
    expect(session.counters.done).toBe(0);
  });

  it('retries queue fetches after transient failures', async () => {
    const server = new FakeServer(ids(3));
    server.failNextQueueFetches = 2;
    const session = await startSession(server);
    await settle(50);
    expect(session.current?.sequence_id).toBe('seq_00');
  });
});

describe('verdict submission', () => {
  it('advances optimistically and logs in submission order', async () => {
    const server = new FakeServer(ids(20));
    const session = await startSession(server);
    for (let i = 0; i < 20; i++) {
      session.decide(i % 2 === 0 ? 'good' : 'bad');
      await settle(4);
    }
    await settle(30);
    expect(session.phase).toBe('complete');
    expect(server.log).toHaveLength(20);
    expect(server.log.map((v) => v.sequence_id)).toEqual(ids(20));
    expect(server.log.map((v) => v.order)).toEqual([...Array(20).keys()]);
    expect(session.counters).toEqual({ done: 20, good: 10, bad: 10 });
    // UI event log matches the server log exactly
    expect(session.eventLog.map((v) => `${v.sequence_id}:${v.decision}`)).toEqual(
      server.log.map((v) => `${v.sequence_id}:${v.decision}`),
    );
  });

  it('keeps ordering under rapid alternating input with slow posts', async () => {
    const server = new FakeServer(ids(10));
    server.postDelayMs = 5;
    const session = await startSession(server, 10);
    for (let i = 0; i < 10; i++) {
      session.decide(i % 2 === 0 ? 'good' : 'bad');
    }
    await settle(200);
    expect(server.log.map((v) => v.sequence_id)).toEqual(ids(10));
    expect(session.inFlight).toBe(0);
  });

  it('measures decision latency from display time', async () => {
    let nowValue = 1000;
    const clock = { now: () => nowValue };
    const server = new FakeServer(ids(2));
    const session = new ReviewSession(server, 5, clock);
    await session.start();
    await settle();
    nowValue += 321;
    session.decide('good');
    await settle();
    expect(server.log[0]?.elapsed_ms).toBe(321);
  });

  it('rolls back the item and counters when the append is rejected', async () => {
    const server = new FakeServer(ids(3));
    const session = await startSession(server);
    server.failNextPosts = 1;
    session.decide('good');
    await settle(30);
    expect(session.current?.sequence_id).toBe('seq_00');
    expect(session.counters.done).toBe(0);
    expect(session.banner).toMatch(/re-decide/);
    expect(server.log).toHaveLength(0);
    // re-deciding works
    session.decide('bad');
    await settle(30);
    expect(server.log.map((v) => v.sequence_id)).toEqual(['seq_00']);
    expect(session.counters).toEqual({ done: 1, good: 0, bad: 1 });
  });
});

describe('undo', () => {
  it('re-queues the item and decrements counters; re-decision appends a correction', async () => {
    const server = new FakeServer(ids(5));
    const session = await startSession(server);
    session.decide('good');
    await settle(10);
    expect(session.counters).toEqual({ done: 1, good: 1, bad: 0 });
    session.undo();
    expect(session.current?.sequence_id).toBe('seq_00');
    expect(session.counters).toEqual({ done: 0, good: 0, bad: 0 });
    session.decide('bad');
    await settle(20);
    // append-only: two log lines, last one wins
    expect(server.log.map((v) => `${v.sequence_id}:${v.decision}`)).toEqual([
      'seq_00:good',
      'seq_00:bad',
    ]);
    expect(server.partition()).toEqual({ good: [], bad: ['seq_00'] });
  });

  it('is a no-op with no history', async () => {
    const server = new FakeServer(ids(2));
    const session = await startSession(server);
    session.undo();
    expect(session.current?.sequence_id).toBe('seq_00');
  });

  it('puts the interrupted current item back into the buffer', async () => {
    const server = new FakeServer(ids(4));
    const session = await startSession(server);
    session.decide('good'); // seq_00
    await settle(10);
    expect(session.current?.sequence_id).toBe('seq_01');
    session.undo(); // back to seq_00; seq_01 goes back to the buffer head
    expect(session.current?.sequence_id).toBe('seq_00');
    session.decide('good');
    await settle(10);
    expect(session.current?.sequence_id).toBe('seq_01');
  });
});

describe('full twenty-item run with undo, replayed', () => {
  it('reconstructs the final partition from the append-only log', async () => {
    const server = new FakeServer(ids(20));
    const session = await startSession(server);
    const wanted = new Map<string, 'good' | 'bad'>();
    for (let i = 0; i < 20; i++) {
      const id = session.current!.sequence_id;
      const decision = i % 3 === 0 ? 'bad' : 'good';
      wanted.set(id, decision);
      session.decide(decision);
      await settle(4);
    }
    // undo the last one and flip it
    session.undo();
    const id = session.current!.sequence_id;
    session.decide(wanted.get(id) === 'good' ? 'bad' : 'good');
    wanted.set(id, wanted.get(id) === 'good' ? 'bad' : 'good');
    await settle(30);

    expect(server.log).toHaveLength(21);
    expect(session.phase).toBe('complete');
    const partition = server.partition();
    const wantGood = [...wanted].filter(([, d]) => d === 'good').map(([k]) => k).sort();
    const wantBad = [...wanted].filter(([, d]) => d === 'bad').map(([k]) => k).sort();
    expect(partition.good).toEqual(wantGood);
    expect(partition.bad).toEqual(wantBad);
  });

  it('sustains at least 2 verdicts per second end to end', async () => {
    const server = new FakeServer(ids(20));
    const session = await startSession(server, 10);
    const t0 = performance.now();
    for (let i = 0; i < 20; i++) {
      session.decide('good');
      await settle(2);
    }
    await settle(30);
    const seconds = (performance.now() - t0) / 1000;
    expect(server.log).toHaveLength(20);
    expect(20 / seconds).toBeGreaterThan(2);
  });
});

describe('keystroke buffering', () => {
  it('buffers decisions that arrive before an item is on screen', async () => {
    const server = new FakeServer(ids(2));
    const session = new ReviewSession(server, 5);
    const started = session.start();
    session.decide('good'); // nothing on screen yet
    await started;
    await settle(30);
    expect(server.log.map((v) => `${v.sequence_id}:${v.decision}`)).toEqual(['seq_00:good']);
  });
});
