/** One labeling session: a named annotator working through server batches
 * one image at a time. All ids come from the server; local progress counts
 * effective (per-image) verdicts so they stay equal to the server's
 * /progress after every successful flush.
 */

import { LabelApi, type BatchItem, type Progress, type Verdict } from './api.js';
import { SubmissionQueue, type StorageLike } from './queue.js';

export interface LocalProgress {
  labeled_good: number;
  labeled_bad: number;
}

export class LabelingSession {
  readonly annotator: string;
  readonly api: LabelApi;
  readonly queue: SubmissionQueue;

  batch: BatchItem[] = [];
  cursor = 0;
  /** unlabeled images left server-side, from the latest batch response */
  remaining = 0;

  private verdicts = new Map<string, Verdict>();

  constructor(api: LabelApi, annotator: string, storage?: StorageLike) {
    if (!annotator.trim()) throw new Error('annotator name is required');
    this.api = api;
    this.annotator = annotator.trim();
    this.queue = new SubmissionQueue((r) => api.submitLabel(r), storage);
  }

  /** Replace the batch with up to n unlabeled images from the server,
   * skipping any the session has already judged but not yet flushed. */
  async fetchBatch(n: number): Promise<number> {
    const response = await this.api.fetchBatch(n);
    this.batch = response.items.filter((i) => !this.verdicts.has(i.image_id));
    this.cursor = 0;
    this.remaining = response.remaining;
    return this.batch.length;
  }

  current(): BatchItem | null {
    return this.batch[this.cursor] ?? null;
  }

  get batchDone(): boolean {
    return this.cursor >= this.batch.length;
  }

  get progress(): LocalProgress {
    let good = 0;
    for (const v of this.verdicts.values()) if (v === 'good') good += 1;
    return { labeled_good: good, labeled_bad: this.verdicts.size - good };
  }

  /** Judge the current image, advance the cursor, and try to send. */
  async label(verdict: Verdict): Promise<void> {
    const item = this.current();
    if (item === null) throw new Error('no image under the cursor');
    this.verdicts.set(item.image_id, verdict);
    this.queue.enqueue({
      image_id: item.image_id,
      verdict,
      annotator: this.annotator,
    });
    this.cursor += 1;
    await this.queue.flush();
  }

  /** Take back the most recent verdict if it has not been sent yet.
   * Returns true when something was undone. */
  undo(): boolean {
    const record = this.queue.undoLast();
    if (record === null) return false;
    this.verdicts.delete(record.image_id);
    const index = this.batch.findIndex((i) => i.image_id === record.image_id);
    if (index >= 0) this.cursor = index;
    return true;
  }

  /** Retry anything still queued (wired to the window `online` event). */
  async flushPending(): Promise<number> {
    const result = await this.queue.flush();
    return result.pending;
  }

  async serverProgress(): Promise<Progress> {
    return this.api.fetchProgress();
  }
}
