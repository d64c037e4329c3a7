/** DOM wiring: a single-image focus view with large good/bad buttons.
 *
 * Keyboard: G = good, B = bad, U = undo the newest unsent verdict.
 * The annotator enters a name once; it is attached to every record.
 */

import { LabelApi } from './api.js';
import { LabelingSession } from './session.js';

const BATCH_SIZE = 20;

const el = (id: string) => document.getElementById(id)!;

let session: LabelingSession | null = null;

function setStatus(text: string): void {
  el('status').textContent = text;
}

async function showProgress(): Promise<void> {
  if (!session) return;
  const local = session.progress;
  el('progress').textContent =
    `good ${local.labeled_good} · bad ${local.labeled_bad} · ` +
    `server remaining ${session.remaining}`;
}

async function showCurrent(): Promise<void> {
  if (!session) return;
  if (session.batchDone) {
    const got = await nextBatch();
    if (got === 0) return;
  }
  const item = session.current();
  if (item) {
    (el('image') as HTMLImageElement).src = session.api.imageUrl(item);
    el('image-id').textContent = item.image_id;
    setStatus('');
  }
  await showProgress();
}

async function nextBatch(): Promise<number> {
  if (!session) return 0;
  try {
    const got = await session.fetchBatch(BATCH_SIZE);
    if (got === 0 && session.remaining === 0) {
      el('labeler').hidden = true;
      el('done-banner').hidden = false; // everything labeled
    }
    return got;
  } catch {
    setStatus('Could not reach the labeling service — press R to retry.');
    return 0;
  }
}

async function judge(verdict: 'good' | 'bad'): Promise<void> {
  if (!session || session.current() === null) return;
  await session.label(verdict);
  const pending = await session.flushPending();
  if (pending > 0) {
    setStatus(`${pending} verdict(s) queued offline; they will be sent when the connection returns.`);
  }
  await showCurrent();
}

function undo(): void {
  if (!session) return;
  if (session.undo()) {
    setStatus('Last verdict taken back.');
  } else {
    setStatus('Nothing to undo: the last verdict was already sent.');
  }
  void showCurrent();
}

async function start(): Promise<void> {
  const name = (el('annotator') as HTMLInputElement).value;
  if (!name.trim()) {
    setStatus('Enter a name first — it is stored with every verdict.');
    return;
  }
  session = new LabelingSession(new LabelApi(''), name);
  el('start-form').hidden = true;
  el('labeler').hidden = false;
  await showCurrent();
}

function onKey(event: KeyboardEvent): void {
  if (!session || el('labeler').hidden) return;
  switch (event.key.toLowerCase()) {
    case 'g':
      void judge('good');
      break;
    case 'b':
      void judge('bad');
      break;
    case 'u':
      undo();
      break;
    case 'r':
      void showCurrent();
      break;
  }
}

export function init(): void {
  el('start-button').addEventListener('click', () => void start());
  el('good-button').addEventListener('click', () => void judge('good'));
  el('bad-button').addEventListener('click', () => void judge('bad'));
  el('undo-button').addEventListener('click', () => undo());
  document.addEventListener('keydown', onKey);
  window.addEventListener('online', () => {
    void session?.flushPending().then(() => showCurrent());
  });
}

if (typeof document !== 'undefined' && document.getElementById('start-button')) {
  init();
}
