import { FetchLike } from "./api.js";
import { SCHEMA_VERSION, SegmentationPoint, StrokesPayload, TopkEntry } from "./types.js";

/** In-memory stand-in for the recognition service, faithful to the
 * JSON schemas and status codes so the client can be contract-tested
 * without a backend. Deterministic: the winning category is a hash of
 * the stroke coordinates, probabilities decay geometrically.
 */

const COMPONENT_NAMES = ["box", "circle", "diagonal", "tick", "zigzag", "arc"];

interface ServedRecord {
  topk: number[];
  strokes: StrokesPayload;
  userId: string;
}

interface FeedbackRow {
  request_id: string;
  category_id: number | null;
  other: boolean;
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function fail(status: number, detail: string): Response {
  return json(status, { detail });
}

function abortError(): DOMException {
  return new DOMException("The operation was aborted.", "AbortError");
}

function hashStrokes(strokes: StrokesPayload): number {
  let h = 17;
  for (const stroke of strokes)
    for (const p of stroke) h = (h * 31 + Math.trunc(p[0] * 7 + p[1] * 13)) >>> 0;
  return h;
}

export class MockServer {
  categories = 12;
  components = COMPONENT_NAMES.length;
  topkServed = 5;
  /** Base probability of the winner; > 0.5 makes the gate fire. */
  topProbability = 0.4;
  /** Artificial response delay, for cancellation tests. */
  latencyMs = 0;
  /** 0 = adapt inline ("done"); > 0 = background job ("started"). */
  adaptDelayMs = 0;
  /** Next recognize/feedback/adapt call fails with this status. */
  failNextWith: number | null = null;

  requestCount = 0;
  served = new Map<string, ServedRecord>();
  feedback = new Map<string, FeedbackRow[]>();
  private versions = new Map<string, number[]>();
  private adaptingUsers = new Set<string>();
  private nextId = 1;
  private versionCounter = 1;

  readonly fetch: FetchLike = async (url, init) => {
    if (this.latencyMs > 0) {
      await new Promise<void>((resolve, reject) => {
        const t = setTimeout(resolve, this.latencyMs);
        init?.signal?.addEventListener("abort", () => {
          clearTimeout(t);
          reject(abortError());
        });
      });
    }
    if (init?.signal?.aborted) throw abortError();
    if (this.failNextWith !== null) {
      const status = this.failNextWith;
      this.failNextWith = null;
      return fail(status, "injected failure");
    }

    const path = new URL(url, "http://mock").pathname;
    const params = new URL(url, "http://mock").searchParams;
    const body = init?.body ? JSON.parse(String(init.body)) : {};

    if (path === "/v1/recognize") return this.recognize(body);
    if (path === "/v1/feedback") return this.feedbackRoute(body);
    if (path === "/v1/adapt") return this.adapt(body);
    if (path === "/v1/model") return this.modelInfo(params.get("user_id") ?? "default");
    if (path === "/v1/model/rollback") return this.rollback(body);
    return fail(404, `no route ${path}`);
  };

  private userVersions(userId: string): number[] {
    if (!this.versions.has(userId)) this.versions.set(userId, []);
    return this.versions.get(userId)!;
  }

  activeVersion(userId: string): number {
    const stack = this.userVersions(userId);
    return stack.length ? stack[stack.length - 1] : 1;
  }

  private recognize(body: { strokes?: StrokesPayload; user_id?: string }): Response {
    const strokes = body.strokes;
    const userId = body.user_id ?? "default";
    if (!Array.isArray(strokes) || strokes.length === 0) return fail(400, "no strokes");
    let total = 0;
    for (const [si, stroke] of strokes.entries()) {
      if (!Array.isArray(stroke) || stroke.length === 0) return fail(400, `stroke ${si} is empty`);
      for (const p of stroke) {
        if (!Array.isArray(p) || p.length !== 2)
          return fail(422, `stroke ${si}: points must be [x, y] pairs`);
      }
      total += stroke.length;
    }
    if (total < 2) return fail(400, "need at least 2 points in total");

    this.requestCount += 1;
    const start = hashStrokes(strokes) % this.categories;
    const topk: TopkEntry[] = [];
    let p = this.topProbability;
    for (let i = 0; i < this.topkServed; i++) {
      const cid = (start + i) % this.categories;
      topk.push({ category_id: cid, probability: p, name: `cat-${cid}` });
      p *= 0.5;
    }

    const points: [number, number][] = [];
    const strokeOfPoint: number[] = [];
    const segmentation: SegmentationPoint[] = [];
    for (const [si, stroke] of strokes.entries()) {
      for (const pt of stroke) {
        points.push([pt[0], pt[1]]);
        strokeOfPoint.push(si);
        segmentation.push({ semantic_id: si % this.components, probability: 0.9 });
      }
    }

    const requestId = `mock-${this.nextId++}`;
    this.served.set(requestId, {
      topk: topk.map((t) => t.category_id),
      strokes: strokes.map((s) => s.map((pt) => [...pt])),
      userId,
    });
    return json(200, {
      schema_version: SCHEMA_VERSION,
      request_id: requestId,
      model_version: this.activeVersion(userId),
      topk,
      points,
      stroke_of_point: strokeOfPoint,
      segmentation,
      gamma: this.topProbability > 0.5 ? COMPONENT_NAMES.map(() => 1) : null,
      elapsed_ms: 0.1,
    });
  }

  private feedbackRoute(body: {
    request_id?: string;
    category_id?: number | null;
    other?: boolean;
    user_id?: string;
    per_stroke_semantics?: number[] | null;
  }): Response {
    const rec = body.request_id ? this.served.get(body.request_id) : undefined;
    if (!rec) return fail(404, `unknown request_id ${JSON.stringify(body.request_id)}`);
    const other = body.other ?? false;
    const categoryId = body.category_id ?? null;
    if (other) {
      if (categoryId !== null && rec.topk.includes(categoryId))
        return fail(400, "'other' conflicts with a top-k category_id");
    } else {
      if (categoryId === null) return fail(422, "category_id required unless other=true");
      if (!rec.topk.includes(categoryId))
        return fail(400, `category ${categoryId} was not in the served top-k`);
    }
    if (body.per_stroke_semantics != null && body.per_stroke_semantics.length !== rec.strokes.length)
      return fail(422, "per_stroke_semantics must give one label per stroke");

    const userId = body.user_id ?? "default";
    if (!this.feedback.has(userId)) this.feedback.set(userId, []);
    const rows = this.feedback.get(userId)!;
    rows.push({ request_id: body.request_id!, category_id: categoryId, other });
    return json(200, { schema_version: SCHEMA_VERSION, status: "recorded", count: rows.length });
  }

  private adapt(body: { user_id?: string }): Response {
    const userId = body.user_id ?? "default";
    if (this.adaptingUsers.has(userId))
      return fail(409, `adaptation already running for '${userId}'`);
    const usable = (this.feedback.get(userId) ?? []).filter((r) => !r.other);
    if (usable.length === 0) return fail(409, `no usable feedback recorded for '${userId}'`);

    const publish = () => {
      this.versionCounter += 1;
      this.userVersions(userId).push(this.versionCounter);
      this.adaptingUsers.delete(userId);
    };
    if (this.adaptDelayMs === 0) {
      publish();
      return json(200, {
        schema_version: SCHEMA_VERSION,
        status: "done",
        version: this.activeVersion(userId),
      });
    }
    this.adaptingUsers.add(userId);
    setTimeout(publish, this.adaptDelayMs);
    return json(200, { schema_version: SCHEMA_VERSION, status: "started" });
  }

  private modelInfo(userId: string): Response {
    const components: Record<string, string> = {};
    COMPONENT_NAMES.forEach((name, i) => (components[String(i)] = name));
    const categories: Record<string, string> = {};
    for (let c = 0; c < this.categories; c++) categories[String(c)] = `cat-${c}`;
    return json(200, {
      schema_version: SCHEMA_VERSION,
      model_loaded: true,
      base_version: 1,
      version: this.activeVersion(userId),
      labels: { categories, components },
      user_versions: [...this.userVersions(userId)],
      adapting: this.adaptingUsers.has(userId),
      last_error: null,
      latency_budget_ms: 500,
      topk_served: this.topkServed,
      n_feedback: (this.feedback.get(userId) ?? []).length,
    });
  }

  private rollback(body: { user_id?: string }): Response {
    const userId = body.user_id ?? "default";
    const stack = this.userVersions(userId);
    if (stack.length === 0) return fail(409, "already at the base model");
    stack.pop();
    return json(200, { schema_version: SCHEMA_VERSION, version: this.activeVersion(userId) });
  }
}
