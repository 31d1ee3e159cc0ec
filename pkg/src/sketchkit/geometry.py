"""Core stroke geometry: points, strokes, sketches, normalization, and the
canonical newline-delimited on-disk format.

A sketch is an ordered list of strokes; a stroke is an ordered list of 2D
points (one unbroken pen trajectory). Coordinates are arbitrary source units
until `normalize` maps them into the unit square. Single-point strokes
(dots) are legal: they carry meaning in symbol sets where a dot
distinguishes categories.

Canonical record format (one JSON object per line):

    {"strokes": [[[x, y], ...], ...],
     "category": int | null,
     "semantics": [int, ...] | null,     # one label per stroke
     "source_id": str | null}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DegenerateSketchError, EmptySketchError, SketchParseError


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def dist(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass
class Stroke:
    """One pen trajectory. `semantic_label` tags every point of the stroke."""

    points: list[Point]
    semantic_label: int | None = None

    def __post_init__(self) -> None:
        self.points = clean_points(self.points)
        if not self.points:
            raise SketchParseError("stroke has no points")

    def arc_length(self) -> float:
        return sum(a.dist(b) for a, b in zip(self.points, self.points[1:]))

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class Sketch:
    strokes: list[Stroke]
    category: int | None = None
    source_id: str | None = None

    def __post_init__(self) -> None:
        if not self.strokes:
            raise EmptySketchError("sketch has no strokes")

    @property
    def semantics(self) -> list[int] | None:
        labels = [s.semantic_label for s in self.strokes]
        if any(lab is None for lab in labels):
            return None
        return labels  # type: ignore[return-value]

    def all_points(self) -> Iterator[Point]:
        for stroke in self.strokes:
            yield from stroke.points

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p.x for p in self.all_points()]
        ys = [p.y for p in self.all_points()]
        return min(xs), min(ys), max(xs), max(ys)


def clean_points(points: Iterable[Point]) -> list[Point]:
    """Drop consecutive duplicate points, preserving order.

    A stroke whose points all coincide collapses to a single dot.
    """
    out: list[Point] = []
    for p in points:
        if not out or p.x != out[-1].x or p.y != out[-1].y:
            out.append(p)
    return out


def normalize(sketch: Sketch) -> Sketch:
    """Map a sketch into [0,1]^2 preserving aspect ratio.

    The longer bounding-box axis is scaled to span [0,1]; the shorter axis is
    centered. Idempotent: applying twice equals applying once (the second
    pass sees scale 1 and zero offsets exactly).
    """
    x0, y0, x1, y1 = sketch.bbox()
    w, h = x1 - x0, y1 - y0
    span = max(w, h)
    if span <= 0.0:
        raise DegenerateSketchError("all points identical; cannot normalize")
    scale = 1.0 / span
    # Center the shorter axis inside the unit square.
    ox = (1.0 - w * scale) / 2.0
    oy = (1.0 - h * scale) / 2.0
    strokes = [
        Stroke(
            [Point((p.x - x0) * scale + ox, (p.y - y0) * scale + oy) for p in s.points],
            semantic_label=s.semantic_label,
        )
        for s in sketch.strokes
    ]
    return Sketch(strokes, category=sketch.category, source_id=sketch.source_id)


def sketch_to_record(sketch: Sketch) -> dict:
    return {
        "strokes": [[[p.x, p.y] for p in s.points] for s in sketch.strokes],
        "category": sketch.category,
        "semantics": sketch.semantics,
        "source_id": sketch.source_id,
    }


def sketch_from_record(record: dict) -> Sketch:
    try:
        raw_strokes = record["strokes"]
    except (KeyError, TypeError) as exc:
        raise SketchParseError(f"record missing 'strokes': {record!r}") from exc
    semantics = record.get("semantics")
    if semantics is not None and len(semantics) != len(raw_strokes):
        raise SketchParseError("semantics length does not match stroke count")
    strokes = []
    for j, pts in enumerate(raw_strokes):
        label = semantics[j] if semantics is not None else None
        strokes.append(Stroke([Point(float(x), float(y)) for x, y in pts], semantic_label=label))
    return Sketch(strokes, category=record.get("category"), source_id=record.get("source_id"))


def save_sketches(path: str | Path, sketches: Iterable[Sketch]) -> int:
    """Write sketches in the canonical newline-delimited format. Returns count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for sk in sketches:
            fh.write(json.dumps(sketch_to_record(sk)) + "\n")
            n += 1
    return n


def load_sketches(path: str | Path) -> list[Sketch]:
    sketches = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SketchParseError(f"{path}:{lineno}: invalid JSON") from exc
            sketches.append(sketch_from_record(record))
    return sketches
