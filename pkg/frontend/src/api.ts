import {
  AdaptResponse,
  FeedbackRequest,
  FeedbackResponse,
  ModelInfo,
  RecognizeResponse,
  SCHEMA_VERSION,
  StrokesPayload,
} from "./types.js";

/** Subset of fetch the client needs; tests inject the mock server's. */
export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export function isAbort(err: unknown): boolean {
  return err instanceof DOMException && err.name === "AbortError";
}

async function parseError(res: Response): Promise<ApiError> {
  let detail = res.statusText || "request failed";
  try {
    const body = await res.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(res.status, detail);
}

export class ApiClient {
  private readonly fetchImpl: FetchLike;
  private inflight: AbortController | null = null;

  constructor(
    readonly baseUrl: string,
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async post<T>(path: string, body: unknown, signal?: AbortSignal): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as T;
  }

  /** POST /v1/recognize with latest-wins semantics: issuing a new call
   * aborts the previous in-flight one. */
  async recognize(strokes: StrokesPayload, userId = "default"): Promise<RecognizeResponse> {
    this.inflight?.abort();
    const ctrl = new AbortController();
    this.inflight = ctrl;
    try {
      return await this.post<RecognizeResponse>(
        "/v1/recognize",
        { strokes, user_id: userId, schema_version: SCHEMA_VERSION },
        ctrl.signal,
      );
    } finally {
      if (this.inflight === ctrl) this.inflight = null;
    }
  }

  async feedback(req: FeedbackRequest): Promise<FeedbackResponse> {
    return this.post<FeedbackResponse>("/v1/feedback", {
      schema_version: SCHEMA_VERSION,
      user_id: "default",
      ...req,
    });
  }

  async adapt(userId = "default", steps?: number): Promise<AdaptResponse> {
    return this.post<AdaptResponse>("/v1/adapt", {
      user_id: userId,
      steps: steps ?? null,
      schema_version: SCHEMA_VERSION,
    });
  }

  async modelInfo(userId = "default"): Promise<ModelInfo> {
    const res = await this.fetchImpl(
      `${this.baseUrl}/v1/model?user_id=${encodeURIComponent(userId)}`,
    );
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as ModelInfo;
  }

  async rollback(userId = "default"): Promise<{ schema_version: number; version: number }> {
    return this.post("/v1/model/rollback", {
      user_id: userId,
      schema_version: SCHEMA_VERSION,
    });
  }
}
