/** Wire types for the /v1 recognition service. Field names mirror the
 * server JSON exactly; keep snake_case here and convert nowhere. */

export const SCHEMA_VERSION = 1;

export interface TopkEntry {
  category_id: number;
  probability: number;
  name: string;
}

export interface SegmentationPoint {
  semantic_id: number;
  probability: number;
}

export interface RecognizeResponse {
  schema_version: number;
  request_id: string;
  model_version: number;
  topk: TopkEntry[];
  /** Resampled [x, y] rows, normalized server-side. */
  points: [number, number][];
  stroke_of_point: number[];
  segmentation: SegmentationPoint[];
  /** Component prior applied by the gate, null when it stayed closed. */
  gamma: number[] | null;
  elapsed_ms: number;
}

export interface FeedbackRequest {
  request_id: string;
  category_id?: number | null;
  other?: boolean;
  user_id?: string;
  per_stroke_semantics?: number[] | null;
  schema_version?: number;
}

export interface FeedbackResponse {
  schema_version: number;
  status: "recorded";
  count: number;
}

export interface AdaptResponse {
  schema_version: number;
  status: "done" | "started";
  version?: number;
}

export interface LabelMaps {
  categories: Record<string, string>;
  components: Record<string, string>;
}

export interface ModelInfo {
  schema_version: number;
  model_loaded: boolean;
  base_version: number | null;
  version: number | null;
  labels: LabelMaps;
  user_versions: number[];
  adapting: boolean;
  last_error: string | null;
  latency_budget_ms: number;
  topk_served: number;
  n_feedback: number;
}

/** One pointer trajectory on the canvas. Finalized on pointer-up and
 * never mutated afterwards. */
export interface CanvasPoint {
  x: number;
  y: number;
  t: number;
}

export interface CanvasStroke {
  points: CanvasPoint[];
  completed: boolean;
}

/** Strokes as the server expects them: arrays of [x, y] pairs. */
export type StrokesPayload = number[][][];
