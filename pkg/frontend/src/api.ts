// Thin typed client for the /v1 session API. Every request the UI makes
// goes through this module, so the contract tests can assert that no
// undocumented endpoint is ever called.

import type {
  ApiErrorBody,
  CreateSessionResponse,
  FeedbackResponse,
  MetaResponse,
  SelectResponse,
  SessionView,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }

  get retryable(): boolean {
    return this.status >= 500 || this.status === 0;
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}${path}`, {
        method,
        headers: body === undefined ? {} : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, "network_error", String(err));
    }
    if (!resp.ok) {
      let payload: ApiErrorBody = { code: "unknown", message: resp.statusText };
      try {
        payload = (await resp.json()) as ApiErrorBody;
      } catch {
        // non-JSON error body; keep the fallback
      }
      throw new ApiError(resp.status, payload.code, payload.message);
    }
    return (await resp.json()) as T;
  }

  meta(): Promise<MetaResponse> {
    return this.request<MetaResponse>("GET", "/v1/meta");
  }

  createSession(category: string, poolSplit = "test", seed: number | null = null):
      Promise<CreateSessionResponse> {
    return this.request<CreateSessionResponse>("POST", "/v1/sessions", {
      category,
      pool_split: poolSplit,
      seed,
    });
  }

  sendFeedback(sessionId: string, text: string): Promise<FeedbackResponse> {
    return this.request<FeedbackResponse>(
      "POST", `/v1/sessions/${sessionId}/feedback`, { text });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request<SessionView>("GET", `/v1/sessions/${sessionId}`);
  }

  select(sessionId: string, itemId: string): Promise<SelectResponse> {
    return this.request<SelectResponse>(
      "POST", `/v1/sessions/${sessionId}/select`, { item_id: itemId });
  }
}
