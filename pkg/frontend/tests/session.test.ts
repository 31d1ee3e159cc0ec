import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { ApiClient } from "../src/api.js";
import { MockServer } from "../src/mockServer.js";
import { strokeColors, strokeSemantics, colorFor } from "../src/overlay.js";
import { DEBOUNCE_MS, SketchSession } from "../src/session.js";
import { RecognizeResponse } from "../src/types.js";

function setup(userId = "u1") {
  const server = new MockServer();
  const session = new SketchSession(new ApiClient("", server.fetch), userId);
  return { server, session };
}

function draw(session: SketchSession, pts: [number, number][]): void {
  session.beginStroke(pts[0][0], pts[0][1], 0);
  for (const [x, y] of pts.slice(1)) session.extendStroke(x, y, 1);
  session.endStroke();
}

describe("debounced recognition", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("collapses rapid stroke ends into one request", async () => {
    const { server, session } = setup();
    draw(session, [[0, 0], [10, 10]]);
    await vi.advanceTimersByTimeAsync(100);
    draw(session, [[20, 0], [30, 10]]);
    await vi.advanceTimersByTimeAsync(100);
    draw(session, [[40, 0], [50, 10]]);
    expect(server.requestCount).toBe(0);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS);
    expect(server.requestCount).toBe(1);
    const res = session.snapshot().response!;
    expect(res.stroke_of_point).toEqual([0, 0, 1, 1, 2, 2]);
  });

  it("holds fire while a new stroke is being drawn", async () => {
    const { server, session } = setup();
    draw(session, [[0, 0], [10, 10]]);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS - 10);
    session.beginStroke(50, 50, 2); // pen back down just in time
    await vi.advanceTimersByTimeAsync(1000);
    expect(server.requestCount).toBe(0);
    session.extendStroke(60, 60, 3);
    session.endStroke();
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS);
    expect(server.requestCount).toBe(1);
  });

  it("sends a deep copy, so later edits cannot leak into the record", async () => {
    const { server, session } = setup();
    draw(session, [[1, 2], [3, 4]]);
    await vi.advanceTimersByTimeAsync(DEBOUNCE_MS);
    const rid = session.snapshot().response!.request_id;
    draw(session, [[9, 9], [8, 8]]); // keep drawing after the send
    const served = server.served.get(rid)!;
    expect(served.strokes).toEqual([[[1, 2], [3, 4]]]);
  });
});

describe("feedback", () => {
  it("selecting a card posts that category with the exact request_id", async () => {
    const { server, session } = setup();
    draw(session, [[0, 0], [40, 40], [80, 0]]);
    await session.recognizeNow();
    const res = session.snapshot().response!;
    const out = await session.selectCandidate(2);
    expect(out.status).toBe("recorded");
    const row = server.feedback.get("u1")![0];
    expect(row.request_id).toBe(res.request_id);
    expect(row.category_id).toBe(res.topk[2].category_id);
  });

  it("is resend-safe: repeat picks for one response do not duplicate", async () => {
    const { server, session } = setup();
    draw(session, [[0, 0], [40, 40]]);
    await session.recognizeNow();
    const first = await session.selectCandidate(0);
    const second = await session.selectCandidate(0);
    expect(second).toEqual(first);
    expect(server.feedback.get("u1")).toHaveLength(1);
    expect(session.snapshot().feedbackCount).toBe(1);
  });

  it("supports flagging the sketch as something else entirely", async () => {
    const { server, session } = setup();
    draw(session, [[0, 0], [40, 40]]);
    await session.recognizeNow();
    await session.markOther();
    expect(server.feedback.get("u1")![0].other).toBe(true);
  });
});

describe("failure handling", () => {
  it("keeps the canvas and offers a retry after a network error", async () => {
    const { server, session } = setup();
    draw(session, [[0, 0], [25, 25]]);
    server.failNextWith = 503;
    await session.recognizeNow();
    let state = session.snapshot();
    expect(state.error).toContain("503");
    expect(state.strokes).toHaveLength(1);
    expect(state.response).toBeNull();

    await session.retry();
    state = session.snapshot();
    expect(state.error).toBeNull();
    expect(state.response!.points).toHaveLength(2);
  });
});

describe("adaptation flow", () => {
  it("resolves immediately when the server adapts inline", async () => {
    const { session } = setup();
    draw(session, [[0, 0], [30, 30]]);
    await session.recognizeNow();
    await session.selectCandidate(0);
    const version = await session.triggerAdapt();
    expect(version).toBe(2);
    expect(session.snapshot().adapting).toBe(false);
    expect((await session.modelInfo()).version).toBe(2);
  });

  it("polls the model endpoint until a background job bumps the version", async () => {
    const { server, session } = setup();
    server.adaptDelayMs = 50;
    draw(session, [[0, 0], [30, 30]]);
    await session.recognizeNow();
    await session.selectCandidate(1);
    const version = await session.triggerAdapt(5000);
    expect(version).toBe(2);
  }, 10_000);
});

describe("segmentation overlay", () => {
  const fake: RecognizeResponse = {
    schema_version: 1,
    request_id: "r",
    model_version: 1,
    topk: [],
    points: [
      [0, 0],
      [1, 1],
      [2, 2],
      [3, 3],
      [4, 4],
    ],
    stroke_of_point: [0, 0, 0, 1, 1],
    segmentation: [
      { semantic_id: 2, probability: 0.9 },
      { semantic_id: 2, probability: 0.9 },
      { semantic_id: 4, probability: 0.6 }, // outvoted within stroke 0
      { semantic_id: 5, probability: 0.9 },
      { semantic_id: 5, probability: 0.9 },
    ],
    gamma: null,
    elapsed_ms: 0.1,
  };

  it("colors each stroke by its majority semantic id", () => {
    expect(strokeSemantics(fake)).toEqual([2, 5]);
    expect(strokeColors(fake)).toEqual([colorFor(2), colorFor(5)]);
  });
});
