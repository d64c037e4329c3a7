/** Offline-tolerant submission queue.
 *
 * Verdicts are appended here first and flushed to the server in order.
 * While the browser is offline (or the server unreachable) they stay
 * queued — and the newest one can still be undone, since nothing has been
 * sent yet. The queue persists across reloads through a Storage-like
 * backend (localStorage in the browser, an in-memory map in tests).
 */

import type { LabelAck, LabelRecord } from './api.js';

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

export class MemoryStorage implements StorageLike {
  private data = new Map<string, string>();
  getItem(key: string): string | null {
    return this.data.get(key) ?? null;
  }
  setItem(key: string, value: string): void {
    this.data.set(key, value);
  }
}

const STORAGE_KEY = 'labeler-queue';

function defaultStorage(): StorageLike {
  if (typeof localStorage !== 'undefined') return localStorage;
  return new MemoryStorage();
}

export interface FlushResult {
  sent: LabelAck[];
  /** records still queued because a send failed */
  pending: number;
}

export class SubmissionQueue {
  private storage: StorageLike;
  private post: (record: LabelRecord) => Promise<LabelAck>;

  constructor(
    post: (record: LabelRecord) => Promise<LabelAck>,
    storage?: StorageLike,
  ) {
    this.post = post;
    this.storage = storage ?? defaultStorage();
  }

  private load(): LabelRecord[] {
    return JSON.parse(this.storage.getItem(STORAGE_KEY) || '[]');
  }

  private save(records: LabelRecord[]): void {
    this.storage.setItem(STORAGE_KEY, JSON.stringify(records));
  }

  get pending(): LabelRecord[] {
    return this.load();
  }

  enqueue(record: LabelRecord): void {
    const queue = this.load();
    queue.push(record);
    this.save(queue);
  }

  /** Drop and return the newest unsent record (keyboard undo). */
  undoLast(): LabelRecord | null {
    const queue = this.load();
    const last = queue.pop() ?? null;
    this.save(queue);
    return last;
  }

  /** Send queued records in order; stop at the first failure and keep the
   * rest for the next flush (e.g. on the window's `online` event). */
  async flush(): Promise<FlushResult> {
    const queue = this.load();
    const sent: LabelAck[] = [];
    while (queue.length > 0) {
      try {
        sent.push(await this.post(queue[0]));
      } catch {
        break; // offline or server unreachable; retry later
      }
      queue.shift();
      this.save(queue);
    }
    return { sent, pending: queue.length };
  }
}
