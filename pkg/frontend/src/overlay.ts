import { RecognizeResponse } from "./types.js";

/** Fixed palette keyed by semantic id; wraps after 10 components. */
export const PALETTE = [
  "#e6194b",
  "#3cb44b",
  "#4363d8",
  "#f58231",
  "#911eb4",
  "#46f0f0",
  "#f032e6",
  "#9a6324",
  "#008080",
  "#808000",
];

export function colorFor(semanticId: number): string {
  return PALETTE[semanticId % PALETTE.length];
}

/** Majority semantic id of each stroke's points. */
export function strokeSemantics(res: RecognizeResponse): number[] {
  const counts = new Map<number, Map<number, number>>();
  res.stroke_of_point.forEach((stroke, i) => {
    const sem = res.segmentation[i].semantic_id;
    if (!counts.has(stroke)) counts.set(stroke, new Map());
    const c = counts.get(stroke)!;
    c.set(sem, (c.get(sem) ?? 0) + 1);
  });
  const nStrokes = Math.max(...res.stroke_of_point) + 1;
  const out: number[] = [];
  for (let s = 0; s < nStrokes; s++) {
    let best = 0;
    let bestCount = -1;
    for (const [sem, n] of counts.get(s) ?? []) {
      if (n > bestCount || (n === bestCount && sem < best)) {
        best = sem;
        bestCount = n;
      }
    }
    out.push(best);
  }
  return out;
}

/** One CSS color per stroke, keyed by its majority semantic id. */
export function strokeColors(res: RecognizeResponse): string[] {
  return strokeSemantics(res).map(colorFor);
}
