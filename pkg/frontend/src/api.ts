import type { Decision, QueueStats, ReviewItem } from './types';

/** Error carrying the HTTP status so callers can branch on 409 vs other 4xx. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

/** Network-level failure (server unreachable); decisions hitting this get buffered. */
export class NetworkError extends Error {}

export interface ReviewApi {
  claimNext(queue: string): Promise<ReviewItem | null>;
  getItem(itemId: string): Promise<ReviewItem>;
  submitDecision(decision: Decision): Promise<ReviewItem>;
  stats(queue: string): Promise<QueueStats>;
}

async function parseDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    return typeof body.detail === 'string' ? body.detail : JSON.stringify(body);
  } catch {
    return response.statusText;
  }
}

/** Thin typed client for the review service HTTP API. */
export class HttpReviewApi implements ReviewApi {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, {
        method,
        headers: {
          Authorization: `Bearer ${this.token}`,
          'Content-Type': 'application/json',
        },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new NetworkError(String(err));
    }
    if (!response.ok) {
      throw new ApiError(response.status, await parseDetail(response));
    }
    return response;
  }

  async claimNext(queue: string): Promise<ReviewItem | null> {
    const response = await this.request('GET', `/queues/${encodeURIComponent(queue)}/next`);
    if (response.status === 204) return null;
    const body = await response.json();
    return body.item as ReviewItem;
  }

  async getItem(itemId: string): Promise<ReviewItem> {
    const response = await this.request('GET', `/items/${encodeURIComponent(itemId)}`);
    return (await response.json()).item as ReviewItem;
  }

  async submitDecision(decision: Decision): Promise<ReviewItem> {
    const response = await this.request('POST', `/items/${encodeURIComponent(decision.itemId)}/decision`, {
      action: decision.action,
      expected_version: decision.expectedVersion,
      corrected_text: decision.correctedText ?? null,
    });
    return (await response.json()).item as ReviewItem;
  }

  async stats(queue: string): Promise<QueueStats> {
    const response = await this.request('GET', `/queues/${encodeURIComponent(queue)}/stats`);
    return (await response.json()) as QueueStats;
  }
}
