"""Arc-length resampling of sketches onto a fixed point budget.

The budget is split across strokes proportionally to arc length using
largest-remainder rounding, then each stroke is fixed to at least one point
by stealing from the largest allocations. Points are placed equidistantly
along each stroke's arc (endpoints included when a stroke gets >= 2 points;
the midpoint when it gets exactly one). Dots (zero-length strokes) always
contribute their single location.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError
from .geometry import Sketch


@dataclass
class ResampledSketch:
    """Fixed-size point set with stroke membership and inherited labels.

    points: (n, 2) float64; stroke_of_point: (n,) int64 (non-decreasing);
    point_semantic: (n,) int64 or None; category: optional id.
    """

    points: np.ndarray
    stroke_of_point: np.ndarray
    point_semantic: np.ndarray | None = None
    category: int | None = None
    source_id: str | None = None

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])

    @property
    def n_strokes(self) -> int:
        return int(self.stroke_of_point.max()) + 1 if self.n_points else 0


def allocate_points(lengths: list[float], n: int) -> list[int]:
    """Split n points over strokes by arc-length share (largest remainder).

    Every stroke ends up with >= 1 point; zero-length strokes participate
    with equal weights when the whole sketch has zero length. Ties in the
    fractional remainders and in the steal step go to the lower index.
    """
    s = len(lengths)
    if n < s:
        raise CapacityError(f"{n} points cannot cover {s} strokes")
    total = float(sum(lengths))
    weights = [max(0.0, l) for l in lengths] if total > 0 else [1.0] * s
    wsum = sum(weights) or float(s)
    quotas = [n * w / wsum for w in weights]
    counts = [int(q) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    short = n - sum(counts)
    for idx in sorted(range(s), key=lambda i: (-remainders[i], i))[:short]:
        counts[idx] += 1
    # Guarantee the minimum of one point per stroke.
    for i in range(s):
        if counts[i] == 0:
            donor = max(range(s), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def _stroke_arrays(points) -> tuple[np.ndarray, np.ndarray]:
    pts = np.array([[p.x, p.y] for p in points], dtype=np.float64)
    if len(pts) == 1:
        return pts, np.zeros(1)
    seg = np.sqrt(((pts[1:] - pts[:-1]) ** 2).sum(axis=1))
    return pts, np.concatenate([[0.0], np.cumsum(seg)])


def _sample_stroke(points, m: int) -> np.ndarray:
    pts, cum = _stroke_arrays(points)
    total = cum[-1]
    if total <= 0.0 or len(pts) == 1:
        return np.repeat(pts[:1], m, axis=0)
    if m == 1:
        targets = np.array([0.5 * total])
    else:
        targets = np.linspace(0.0, total, m)
    out = np.empty((m, 2), dtype=np.float64)
    out[:, 0] = np.interp(targets, cum, pts[:, 0])
    out[:, 1] = np.interp(targets, cum, pts[:, 1])
    return out


def resample(sketch: Sketch, n: int) -> ResampledSketch:
    """Resample a sketch to exactly n points (n >= stroke count)."""
    lengths = [s.arc_length() for s in sketch.strokes]
    counts = allocate_points(lengths, n)
    chunks = []
    stroke_ids = []
    labels = []
    have_labels = sketch.semantics is not None
    for j, (stroke, m) in enumerate(zip(sketch.strokes, counts)):
        chunks.append(_sample_stroke(stroke.points, m))
        stroke_ids.extend([j] * m)
        if have_labels:
            labels.extend([stroke.semantic_label] * m)
    return ResampledSketch(
        points=np.concatenate(chunks, axis=0),
        stroke_of_point=np.asarray(stroke_ids, dtype=np.int64),
        point_semantic=np.asarray(labels, dtype=np.int64) if have_labels else None,
        category=sketch.category,
        source_id=sketch.source_id,
    )
