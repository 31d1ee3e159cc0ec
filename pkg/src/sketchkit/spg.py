"""Importer for part-labeled NDJSON sketch collections in the quickdraw
stroke layout.

Accepted record shape, one JSON object per line::

    {"word": "face", "key_id": "123",
     "drawing": [[[x0, x1, ...], [y0, y1, ...]], ...],
     "part_labels": ["eye", "eye", "mouth"]}

* ``drawing``: one [xs, ys] pair of equal-length lists per stroke.
* ``part_labels``: one label per stroke, strings or ints.
* ``word``/``category`` name the category; ``key_id``/``key`` identify
  the record in error messages.

Category and part vocabularies are built from the union of what the
files contain (sorted for stable ids) unless an explicit category list
narrows and orders the import.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ImportError_
from .geometry import Point, Sketch, Stroke


@dataclass
class ImportResult:
    sketches: list[Sketch]
    categories: list[str]
    components: list[str]
    skipped: int = 0
    stats: dict = field(default_factory=dict)


def _record_id(obj: dict, path: Path, line_no: int) -> str:
    rid = obj.get("key_id") or obj.get("key")
    return f"{path.name}:{rid}" if rid else f"{path.name}:line{line_no}"


def _iter_records(paths: list[Path]):
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ImportError_(f"{path.name}:line{line_no}: not JSON ({e})") from e
                if not isinstance(obj, dict):
                    raise ImportError_(f"{path.name}:line{line_no}: record is not an object")
                yield path, line_no, obj


def _parse_record(obj: dict, rid: str) -> tuple[str, list[list[tuple[float, float]]], list]:
    word = obj.get("word") or obj.get("category")
    if not isinstance(word, str) or not word:
        raise ImportError_(f"{rid}: missing category name")
    drawing = obj.get("drawing")
    labels = obj.get("part_labels")
    if not isinstance(drawing, list) or not drawing:
        raise ImportError_(f"{rid}: missing or empty drawing")
    if not isinstance(labels, list) or len(labels) != len(drawing):
        raise ImportError_(f"{rid}: part_labels must give one label per stroke")
    strokes = []
    for si, stroke in enumerate(drawing):
        if (
            not isinstance(stroke, list)
            or len(stroke) != 2
            or not isinstance(stroke[0], list)
            or len(stroke[0]) != len(stroke[1])
            or not stroke[0]
        ):
            raise ImportError_(f"{rid}: stroke {si} is not an [xs, ys] pair")
        try:
            pts = [(float(x), float(y)) for x, y in zip(stroke[0], stroke[1])]
        except (TypeError, ValueError) as e:
            raise ImportError_(f"{rid}: stroke {si} has non-numeric coordinates") from e
        strokes.append(pts)
    for li, lab in enumerate(labels):
        if not isinstance(lab, (str, int)) or isinstance(lab, bool):
            raise ImportError_(f"{rid}: part label {li} must be a string or int")
    return word, strokes, labels


def import_spg(
    path: str | Path,
    categories: list[str] | None = None,
) -> ImportResult:
    """Read one .ndjson file or a directory of them into canonical sketches.

    When ``categories`` is given, only those categories are kept and their
    order fixes the id assignment; otherwise ids follow sorted names.
    """
    root = Path(path)
    if root.is_dir():
        paths = sorted(root.glob("*.ndjson")) + sorted(root.glob("*.jsonl"))
        if not paths:
            raise ImportError_(f"no .ndjson files under {root}")
    elif root.is_file():
        paths = [root]
    else:
        raise ImportError_(f"no such file or directory: {root}")

    raw: list[tuple[str, str, list, list]] = []  # (rid, word, strokes, labels)
    words: set[str] = set()
    parts: set = set()
    skipped = 0
    for p, line_no, obj in _iter_records(paths):
        rid = _record_id(obj, p, line_no)
        word, strokes, labels = _parse_record(obj, rid)
        if categories is not None and word not in categories:
            skipped += 1
            continue
        words.add(word)
        parts.update(labels)
        raw.append((rid, word, strokes, labels))

    if not raw:
        raise ImportError_("no records matched the import")
    cat_names = list(categories) if categories is not None else sorted(words)
    cat_ids = {name: i for i, name in enumerate(cat_names)}
    comp_names = [str(x) for x in sorted(parts, key=str)]
    comp_ids = {name: i for i, name in enumerate(comp_names)}

    sketches: list[Sketch] = []
    for rid, word, strokes, labels in raw:
        sk_strokes = []
        for pts, lab in zip(strokes, labels):
            sk_strokes.append(
                Stroke([Point(x, y) for x, y in pts], semantic_label=comp_ids[str(lab)])
            )
        sketches.append(Sketch(sk_strokes, category=cat_ids[word], source_id=rid))
    return ImportResult(
        sketches=sketches,
        categories=cat_names,
        components=comp_names,
        skipped=skipped,
        stats={"files": len(paths), "records": len(sketches)},
    )
