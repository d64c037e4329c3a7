import { describe, expect, it } from 'vitest';

import type { LabelAck, LabelRecord } from '../src/api.js';
import { MemoryStorage, SubmissionQueue } from '../src/queue.js';

const rec = (id: string): LabelRecord => ({
  image_id: id,
  verdict: 'good',
  annotator: 'alice',
});

function collectingPost(sent: LabelRecord[], failOn?: Set<string>) {
  return async (record: LabelRecord): Promise<LabelAck> => {
    if (failOn?.has(record.image_id)) throw new Error('offline');
    sent.push(record);
    return { accepted: true, written: true };
  };
}

describe('SubmissionQueue', () => {
  it('flushes queued records in order', async () => {
    const sent: LabelRecord[] = [];
    const queue = new SubmissionQueue(collectingPost(sent), new MemoryStorage());
    queue.enqueue(rec('a'));
    queue.enqueue(rec('b'));
    const result = await queue.flush();
    expect(sent.map((r) => r.image_id)).toEqual(['a', 'b']);
    expect(result.pending).toBe(0);
    expect(queue.pending).toEqual([]);
  });

  it('keeps records across a failed flush and retries later', async () => {
    const sent: LabelRecord[] = [];
    const failing = new Set(['a', 'b']);
    const queue = new SubmissionQueue(collectingPost(sent, failing), new MemoryStorage());
    queue.enqueue(rec('a'));
    queue.enqueue(rec('b'));
    let result = await queue.flush();
    expect(result.pending).toBe(2); // nothing got through
    expect(sent).toEqual([]);

    failing.clear(); // back online
    result = await queue.flush();
    expect(result.pending).toBe(0);
    expect(sent.map((r) => r.image_id)).toEqual(['a', 'b']);
  });

  it('stops at the first failure but keeps earlier successes', async () => {
    const sent: LabelRecord[] = [];
    const queue = new SubmissionQueue(
      collectingPost(sent, new Set(['b'])),
      new MemoryStorage(),
    );
    queue.enqueue(rec('a'));
    queue.enqueue(rec('b'));
    queue.enqueue(rec('c'));
    const result = await queue.flush();
    expect(sent.map((r) => r.image_id)).toEqual(['a']);
    expect(result.pending).toBe(2); // b and c wait for the next flush
  });

  it('undoLast removes only the newest unsent record', async () => {
    const queue = new SubmissionQueue(collectingPost([]), new MemoryStorage());
    queue.enqueue(rec('a'));
    queue.enqueue(rec('b'));
    expect(queue.undoLast()?.image_id).toBe('b');
    expect(queue.pending.map((r) => r.image_id)).toEqual(['a']);
  });

  it('undoLast on an empty queue returns null', () => {
    const queue = new SubmissionQueue(collectingPost([]), new MemoryStorage());
    expect(queue.undoLast()).toBeNull();
  });

  it('persists through the storage backend', () => {
    const storage = new MemoryStorage();
    const first = new SubmissionQueue(collectingPost([]), storage);
    first.enqueue(rec('a'));
    // a second queue over the same storage sees the record (page reload)
    const second = new SubmissionQueue(collectingPost([]), storage);
    expect(second.pending.map((r) => r.image_id)).toEqual(['a']);
  });
});
