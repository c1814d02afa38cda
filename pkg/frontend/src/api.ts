// Thin typed client for the review service. One method per endpoint;
// every user action upstream maps to exactly one call here.

import type {
  Action,
  CandidatesPage,
  DecisionAck,
  RerankAck,
  SessionInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }

  // status 0 stands for "request never reached the server"
  get retryable(): boolean {
    return this.status === 0 || this.status >= 500;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly fetchFn: FetchLike;
  private readonly base: string;

  constructor(fetchFn?: FetchLike, base = "") {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
    this.base = base;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, `network failure: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; the status line is all we have
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  session(): Promise<SessionInfo> {
    return this.request("/api/session");
  }

  candidates(afterRank = 0, limit = 50): Promise<CandidatesPage> {
    return this.request(`/api/candidates?after_rank=${afterRank}&limit=${limit}`);
  }

  decide(imageId: string, action: Action): Promise<DecisionAck> {
    return this.request("/api/decisions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ image_id: imageId, action }),
    });
  }

  rerank(): Promise<RerankAck> {
    return this.request("/api/rerank", { method: "POST" });
  }

  imageUrl(imageId: string): string {
    return `${this.base}/api/images/${encodeURIComponent(imageId)}`;
  }
}
