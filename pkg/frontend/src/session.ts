import { ApiClient, isAbort } from "./api.js";
import {
  CanvasStroke,
  FeedbackResponse,
  ModelInfo,
  RecognizeResponse,
  StrokesPayload,
} from "./types.js";

export const DEBOUNCE_MS = 300;
const ADAPT_POLL_MS = 250;

export interface SessionState {
  strokes: CanvasStroke[];
  /** Latest completed recognition; candidates render from here. */
  response: RecognizeResponse | null;
  /** Set on network/server failure; cleared by the next success. */
  error: string | null;
  pending: boolean;
  adapting: boolean;
  modelVersion: number | null;
  feedbackCount: number;
}

type Listener = (state: SessionState) => void;

/** Drawing/recognition controller, free of DOM so it runs under tests.
 *
 * Strokes accumulate through begin/extend/end; every stroke end arms a
 * debounce timer and the payload snapshot is taken only when the timer
 * fires, so the server always sees the finalized picture. A snapshot is
 * a deep copy: later drawing can never mutate what was sent.
 */
export class SketchSession {
  private state: SessionState = {
    strokes: [],
    response: null,
    error: null,
    pending: false,
    adapting: false,
    modelVersion: null,
    feedbackCount: 0,
  };
  private listeners: Listener[] = [];
  private timer: ReturnType<typeof setTimeout> | null = null;
  private drawing: CanvasStroke | null = null;
  private lastSent: StrokesPayload | null = null;
  private feedbackSent = new Map<string, FeedbackResponse>();

  constructor(
    private readonly api: ApiClient,
    readonly userId = "default",
  ) {}

  onUpdate(cb: Listener): void {
    this.listeners.push(cb);
  }

  private emit(): void {
    for (const cb of this.listeners) cb(this.snapshot());
  }

  snapshot(): SessionState {
    return { ...this.state, strokes: this.state.strokes };
  }

  // ---- drawing ----

  beginStroke(x: number, y: number, t = Date.now()): void {
    if (this.timer) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.drawing = { points: [{ x, y, t }], completed: false };
    this.state.strokes = [...this.state.strokes, this.drawing];
    this.emit();
  }

  extendStroke(x: number, y: number, t = Date.now()): void {
    if (!this.drawing) return;
    this.drawing.points.push({ x, y, t });
  }

  endStroke(): void {
    if (!this.drawing) return;
    this.drawing.completed = true;
    this.drawing = null;
    this.schedule();
    this.emit();
  }

  clear(): void {
    if (this.timer) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.drawing = null;
    this.state.strokes = [];
    this.state.response = null;
    this.state.error = null;
    this.emit();
  }

  private schedule(): void {
    if (this.timer) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.recognizeNow();
    }, DEBOUNCE_MS);
  }

  /** Payload for the server: completed strokes only, deep-copied. */
  payload(): StrokesPayload {
    return this.state.strokes
      .filter((s) => s.completed)
      .map((s) => s.points.map((p) => [p.x, p.y]));
  }

  async recognizeNow(): Promise<void> {
    const strokes = this.payload();
    if (strokes.length === 0) return;
    this.lastSent = strokes;
    this.state.pending = true;
    this.emit();
    try {
      const res = await this.api.recognize(strokes, this.userId);
      this.state.response = res;
      this.state.modelVersion = res.model_version;
      this.state.error = null;
      this.state.pending = false;
      this.emit();
    } catch (err) {
      if (isAbort(err)) return; // superseded by a newer request
      this.state.error = err instanceof Error ? err.message : String(err);
      this.state.pending = false;
      this.emit();
    }
  }

  /** Re-send the last failed payload; drawn strokes are untouched. */
  async retry(): Promise<void> {
    if (this.lastSent === null) return;
    this.state.pending = true;
    this.state.error = null;
    this.emit();
    try {
      const res = await this.api.recognize(this.lastSent, this.userId);
      this.state.response = res;
      this.state.modelVersion = res.model_version;
      this.state.pending = false;
      this.emit();
    } catch (err) {
      if (isAbort(err)) return;
      this.state.error = err instanceof Error ? err.message : String(err);
      this.state.pending = false;
      this.emit();
    }
  }

  // ---- feedback ----

  /** Record the user's pick. Always references the request_id of the
   * response being shown; repeat clicks for the same response are
   * answered from cache instead of duplicating the record. */
  async selectCandidate(index: number): Promise<FeedbackResponse> {
    const res = this.state.response;
    if (!res) throw new Error("nothing recognized yet");
    const entry = res.topk[index];
    if (!entry) throw new Error(`no candidate at index ${index}`);
    return this.sendFeedback({ category_id: entry.category_id });
  }

  /** The intended symbol was not among the candidates. */
  async markOther(): Promise<FeedbackResponse> {
    if (!this.state.response) throw new Error("nothing recognized yet");
    return this.sendFeedback({ other: true });
  }

  private async sendFeedback(
    extra: { category_id?: number; other?: boolean },
  ): Promise<FeedbackResponse> {
    const res = this.state.response!;
    const cached = this.feedbackSent.get(res.request_id);
    if (cached) return cached;
    const out = await this.api.feedback({
      request_id: res.request_id,
      user_id: this.userId,
      ...extra,
    });
    this.feedbackSent.set(res.request_id, out);
    this.state.feedbackCount = out.count;
    this.emit();
    return out;
  }

  // ---- adaptation ----

  /** Kick off personal adaptation and resolve once /v1/model shows a
   * new version (inline servers answer with it directly). */
  async triggerAdapt(timeoutMs = 60_000): Promise<number> {
    const before = this.state.modelVersion;
    this.state.adapting = true;
    this.emit();
    try {
      const res = await this.api.adapt(this.userId);
      if (res.status === "done" && res.version !== undefined) {
        this.state.modelVersion = res.version;
        return res.version;
      }
      const deadline = Date.now() + timeoutMs;
      while (Date.now() < deadline) {
        await new Promise((r) => setTimeout(r, ADAPT_POLL_MS));
        const info = await this.api.modelInfo(this.userId);
        if (info.last_error) throw new Error(info.last_error);
        if (!info.adapting && info.version !== null && info.version !== before) {
          this.state.modelVersion = info.version;
          return info.version;
        }
      }
      throw new Error("adaptation timed out");
    } finally {
      this.state.adapting = false;
      this.emit();
    }
  }

  async modelInfo(): Promise<ModelInfo> {
    return this.api.modelInfo(this.userId);
  }
}
