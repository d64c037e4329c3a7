/** Typed client for the pipeline's labeling HTTP API.
 *
 * The server owns all image ids; this client never invents one. Endpoints:
 *   GET  /batch?n=N   -> { items: [{image_id, url}], remaining }
 *   GET  /image/{id}  -> PNG bytes (used via <img src>)
 *   POST /label       -> { accepted, written } (idempotent per
 *                        image/annotator/verdict)
 *   GET  /progress    -> { labeled_good, labeled_bad, remaining }
 */

export type Verdict = 'good' | 'bad';

export interface BatchItem {
  image_id: string;
  url: string;
}

export interface BatchResponse {
  items: BatchItem[];
  remaining: number;
}

export interface Progress {
  labeled_good: number;
  labeled_bad: number;
  remaining: number;
}

export interface LabelAck {
  accepted: boolean;
  /** false when the server already held an identical record */
  written: boolean;
}

export interface LabelRecord {
  image_id: string;
  verdict: Verdict;
  annotator: string;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = 'ApiError';
  }
}

async function getJson<T>(url: string): Promise<T> {
  const response = await fetch(url);
  if (!response.ok) {
    throw new ApiError(response.status, `GET ${url}: ${response.statusText}`);
  }
  return response.json() as Promise<T>;
}

export class LabelApi {
  constructor(private baseUrl: string = '') {}

  fetchBatch(n: number): Promise<BatchResponse> {
    return getJson<BatchResponse>(`${this.baseUrl}/batch?n=${n}`);
  }

  fetchProgress(): Promise<Progress> {
    return getJson<Progress>(`${this.baseUrl}/progress`);
  }

  async submitLabel(record: LabelRecord): Promise<LabelAck> {
    const response = await fetch(`${this.baseUrl}/label`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(record),
    });
    if (!response.ok) {
      throw new ApiError(response.status, `POST /label: ${response.statusText}`);
    }
    return response.json() as Promise<LabelAck>;
  }

  /** Absolute URL for an item's image, for use as an <img> source. */
  imageUrl(item: BatchItem): string {
    return `${this.baseUrl}${item.url}`;
  }
}
