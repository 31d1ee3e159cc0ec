"""Synthetic sketch corpus: compositional symbol categories built from a
small vocabulary of stroke primitives.

Each category is a set of placed components; each component renders as one
or more strokes whose points carry the component id as semantic label, so
the corpus exercises the same category/component structure as a real symbol
standard (categories share components, and two categories may differ by a
single small mark). Per-"user" styles (slant, scale, jitter) make style
and domain-shift experiments possible.

Spec file schema (JSON):

    {"samples_per_category": 20,
     "components": [{"id": 0, "name": "box"}, ...],
     "categories": [{"id": 0, "name": "box",
                     "parts": [{"component": 0, "cx": 0.5, "cy": 0.5,
                                "scale": 0.72, "wobble": 1.0}]}, ...],
     "noise": {"jitter": 0.008, "scale_range": [0.88, 1.12],
               "rotation": 0.06, "spacing": 0.05, "placement": 0.02},
     "styles": [{"id": "s0", "slant": 0.0, "scale": 1.0,
                 "jitter_mul": 1.0}, ...]}

Component names must come from PRIMITIVES. All randomness for a sample is
derived from (seed, category, sample index) only, so two corpora generated
with the same seed but different styles contain the same base geometry —
style parameters are applied deterministically on top.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SynthSpecError
from .geometry import Point, Sketch, Stroke


def _polyline(*pts) -> list[np.ndarray]:
    return [np.array(pts, dtype=np.float64)]


def _circle_pts(n: int = 24, sweep: float = 2 * math.pi, start: float = 0.0):
    ang = start + np.linspace(0.0, sweep, n + 1)
    return [np.stack([0.5 * np.cos(ang), 0.5 * np.sin(ang)], axis=1)]


# Local frames are [-0.5, 0.5]^2, centered on the placement anchor.
PRIMITIVES: dict[str, list[np.ndarray]] = {
    "box": _polyline((-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5)),
    "circle": _circle_pts(24),
    # representative shapes; actual rendering draws these with a random
    # midpoint bend, see _BEND_RANGES
    "diagonal": _polyline((-0.5, -0.42), (0.5, 0.42)),
    "tick": _polyline((-0.5, -0.42), (-0.16, 0.12), (0.5, 0.42)),
    "zigzag": _polyline((-0.5, 0.3), (-0.25, -0.3), (0.0, 0.3), (0.25, -0.3), (0.5, 0.3)),
    "arc": _circle_pts(12, sweep=math.pi, start=-math.pi / 2),
    "cross": [
        np.array([(-0.5, 0.0), (0.5, 0.0)], dtype=np.float64),
        np.array([(0.0, -0.5), (0.0, 0.5)], dtype=np.float64),
    ],
    "wave": [
        np.stack(
            [np.linspace(-0.5, 0.5, 17), 0.35 * np.sin(np.linspace(0, 2 * math.pi, 17))],
            axis=1,
        )
    ],
}


@dataclass(frozen=True)
class PlacedPart:
    component: int
    cx: float
    cy: float
    scale: float
    wobble: float = 1.0  # extra point jitter for this part only
    roam: float = 0.0  # extra placement spread for this part only


@dataclass(frozen=True)
class StyleSpec:
    id: str
    slant: float = 0.0  # shear: x -> x + slant * y
    scale: float = 1.0
    jitter_mul: float = 1.0


@dataclass
class SynthSpec:
    components: dict[int, str]  # id -> primitive name
    categories: dict[int, list[PlacedPart]]
    category_names: dict[int, str] = field(default_factory=dict)
    samples_per_category: int = 20
    jitter: float = 0.016
    scale_range: tuple[float, float] = (0.86, 1.14)
    rotation: float = 0.08
    spacing: float = 0.05
    placement: float = 0.03
    styles: list[StyleSpec] = field(default_factory=lambda: [StyleSpec("s0")])

    def __post_init__(self) -> None:
        if not self.components or not self.categories:
            raise SynthSpecError("spec needs at least one component and category")
        for cid, name in self.components.items():
            if name not in PRIMITIVES:
                raise SynthSpecError(f"component {cid}: unknown primitive {name!r}")
        for cat, parts in self.categories.items():
            if not parts:
                raise SynthSpecError(f"category {cat} has no parts")
            for part in parts:
                if part.component not in self.components:
                    raise SynthSpecError(
                        f"category {cat} references undefined component {part.component}"
                    )

    def category_components(self) -> dict[int, set[int]]:
        """Category id -> set of component ids (knowledge-matrix input)."""
        return {cat: {p.component for p in parts} for cat, parts in self.categories.items()}

    def style_by_id(self, style_id: str) -> StyleSpec:
        for st in self.styles:
            if st.id == style_id:
                return st
        raise SynthSpecError(f"unknown style id {style_id!r}")


def spec_to_dict(spec: SynthSpec) -> dict:
    return {
        "samples_per_category": spec.samples_per_category,
        "components": [{"id": cid, "name": name} for cid, name in sorted(spec.components.items())],
        "categories": [
            {
                "id": cat,
                "name": spec.category_names.get(cat, str(cat)),
                "parts": [
                    {
                        "component": p.component, "cx": p.cx, "cy": p.cy,
                        "scale": p.scale, "wobble": p.wobble, "roam": p.roam,
                    }
                    for p in parts
                ],
            }
            for cat, parts in sorted(spec.categories.items())
        ],
        "noise": {
            "jitter": spec.jitter,
            "scale_range": list(spec.scale_range),
            "rotation": spec.rotation,
            "spacing": spec.spacing,
            "placement": spec.placement,
        },
        "styles": [
            {"id": s.id, "slant": s.slant, "scale": s.scale, "jitter_mul": s.jitter_mul}
            for s in spec.styles
        ],
    }


def spec_from_dict(data: dict) -> SynthSpec:
    noise = data.get("noise", {})
    return SynthSpec(
        components={int(c["id"]): c["name"] for c in data["components"]},
        categories={
            int(c["id"]): [
                PlacedPart(
                    int(p["component"]), p["cx"], p["cy"], p["scale"],
                    p.get("wobble", 1.0), p.get("roam", 0.0),
                )
                for p in c["parts"]
            ]
            for c in data["categories"]
        },
        category_names={int(c["id"]): c.get("name", str(c["id"])) for c in data["categories"]},
        samples_per_category=int(data.get("samples_per_category", 20)),
        jitter=noise.get("jitter", 0.008),
        scale_range=tuple(noise.get("scale_range", (0.88, 1.12))),
        rotation=noise.get("rotation", 0.06),
        spacing=noise.get("spacing", 0.05),
        placement=noise.get("placement", 0.02),
        styles=[
            StyleSpec(s["id"], s.get("slant", 0.0), s.get("scale", 1.0), s.get("jitter_mul", 1.0))
            for s in data.get("styles", [{"id": "s0"}])
        ],
    )


def load_spec(path: str | Path) -> SynthSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))


def save_spec(spec: SynthSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2)


def _densify(pts: np.ndarray, spacing: float) -> np.ndarray:
    """Insert intermediate points so consecutive gaps stay below spacing."""
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        gap = float(np.hypot(*(b - a)))
        steps = max(1, int(math.ceil(gap / spacing)))
        for i in range(1, steps + 1):
            out.append(a + (b - a) * (i / steps))
    return np.asarray(out)


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


# The two slash marks are drawn as a straight segment with a perpendicular
# bend at the midpoint; under pen jitter the shallow end of the tick range
# is easy to mistake for a bent diagonal and vice versa.
_BEND_RANGES = {"tick": (0.14, 0.45), "diagonal": (0.0, 0.10)}


def _bent_segment(bend: float) -> list[np.ndarray]:
    a = np.array([-0.5, -0.42])
    b = np.array([0.5, 0.42])
    d = (b - a) / np.linalg.norm(b - a)
    mid = (a + b) / 2 + bend * np.array([-d[1], d[0]])
    return [np.stack([a, mid, b])]


def _part_geometry(name: str, rng: np.random.Generator) -> list[np.ndarray]:
    if name in _BEND_RANGES:
        lo, hi = _BEND_RANGES[name]
        return _bent_segment(rng.uniform(lo, hi))
    return PRIMITIVES[name]


def _render_sample(
    spec: SynthSpec, cat: int, rng: np.random.Generator, style: StyleSpec
) -> Sketch:
    strokes: list[Stroke] = []
    for part in spec.categories[cat]:
        lo, hi = spec.scale_range
        scale = part.scale * rng.uniform(lo, hi)
        theta = rng.normal(0.0, spec.rotation)
        center = np.array([part.cx, part.cy]) + rng.normal(0.0, spec.placement + part.roam, 2)
        for base in _part_geometry(spec.components[part.component], rng):
            pts = _densify(base, spec.spacing / max(scale, 1e-9))
            pts = pts @ _rot(theta).T * scale + center
            pts = pts + rng.normal(0.0, spec.jitter * style.jitter_mul * part.wobble, pts.shape)
            # Style transform: shear then uniform scale about the canvas center.
            xs = pts[:, 0] + style.slant * (pts[:, 1] - 0.5)
            ys = pts[:, 1]
            pts = np.stack([(xs - 0.5) * style.scale + 0.5, (ys - 0.5) * style.scale + 0.5], axis=1)
            strokes.append(
                Stroke([Point(float(x), float(y)) for x, y in pts], semantic_label=part.component)
            )
    return Sketch(strokes, category=cat, source_id=style.id)


def generate_synthetic_corpus(
    spec: SynthSpec,
    seed: int,
    samples_per_category: int | None = None,
    style_ids: list[str] | None = None,
) -> list[Sketch]:
    """Generate a labeled corpus. Deterministic in (spec, seed, arguments).

    Styles are assigned round-robin over sample indices. Base geometry for
    sample (category, index) depends on (seed, category, index) only, so
    corpora generated with different style lists pair up sample-by-sample.
    """
    styles = spec.styles if style_ids is None else [spec.style_by_id(s) for s in style_ids]
    if not styles:
        raise SynthSpecError("no styles selected")
    per_cat = spec.samples_per_category if samples_per_category is None else samples_per_category
    sketches = []
    for cat in sorted(spec.categories):
        for idx in range(per_cat):
            rng = np.random.default_rng(np.random.SeedSequence((seed, cat, idx)))
            sketches.append(_render_sample(spec, cat, rng, styles[idx % len(styles)]))
    return sketches


def knowledge_for_spec(spec: SynthSpec, gamma_r: float = 0.9):
    """Knowledge matrix matching the spec's category/component structure."""
    from .knowledge import build_knowledge_matrix

    return build_knowledge_matrix(
        spec.category_components(),
        gamma_r=gamma_r,
        category_names=dict(spec.category_names),
        component_names=dict(spec.components),
    )


def slant_statistic(sketch: Sketch) -> float:
    """Shear estimate cov(x, y)/var(y) over all points.

    Invariant to uniform scaling and translation, so it survives
    normalization; differencing paired corpora isolates the style slant.
    """
    pts = np.array([[p.x, p.y] for p in sketch.all_points()])
    vy = pts[:, 1].var()
    if vy <= 0:
        return 0.0
    return float(np.cov(pts[:, 0], pts[:, 1], bias=True)[0, 1] / vy)


def default_spec(extended: bool = False) -> SynthSpec:
    """The stock desk-scale corpus: 6 components, 12 categories.

    With ``extended=True``, two extra primitives (cross, wave) and four
    extra categories are appended; the extras only appear in categories
    12-15, which makes incremental-component session plans possible.
    """
    components = {0: "box", 1: "circle", 2: "diagonal", 3: "tick", 4: "zigzag", 5: "arc"}
    p = PlacedPart
    # Containers and layout are drawn crisply and decide the category, so
    # recognition stays strong. The arc is deliberately the awkward part:
    # small, heavily fuzzed, and wandering around its anchor, so the point
    # labeler gets almost no stable local cue for it. The mark inside a
    # container is a tick in box contexts and a diagonal in circle contexts;
    # tick stays strictly in box-family categories and diagonal in
    # circle/open ones, so even a recognizer's top few candidates pin down
    # which of the two is legal.
    fuzz = 8.0
    categories: dict[int, list[PlacedPart]] = {
        0: [p(0, 0.5, 0.5, 0.72)],
        1: [p(1, 0.5, 0.5, 0.72)],
        2: [p(0, 0.5, 0.5, 0.72), p(3, 0.5, 0.5, 0.56)],
        3: [p(1, 0.5, 0.5, 0.72), p(2, 0.5, 0.5, 0.52)],
        4: [p(0, 0.5, 0.42, 0.66), p(4, 0.5, 0.86, 0.5)],
        5: [p(1, 0.5, 0.42, 0.6), p(4, 0.5, 0.86, 0.5)],
        6: [p(0, 0.42, 0.5, 0.62), p(5, 0.82, 0.5, 0.3, fuzz, 0.12)],
        7: [p(1, 0.42, 0.5, 0.6), p(5, 0.82, 0.5, 0.3, fuzz, 0.12)],
        8: [p(0, 0.5, 0.5, 0.76), p(1, 0.5, 0.5, 0.4)],
        9: [p(2, 0.5, 0.6, 0.66), p(4, 0.5, 0.16, 0.5)],
        10: [p(5, 0.34, 0.5, 0.3, fuzz, 0.12), p(4, 0.72, 0.5, 0.44)],
        11: [p(0, 0.5, 0.5, 0.78), p(1, 0.5, 0.5, 0.42), p(3, 0.5, 0.5, 0.72)],
    }
    names = {
        0: "box", 1: "circle", 2: "box+tick", 3: "circle+diagonal",
        4: "box+zigzag", 5: "circle+zigzag", 6: "box+arc", 7: "circle+arc",
        8: "box+circle", 9: "diagonal+zigzag", 10: "arc+zigzag",
        11: "box+circle+tick",
    }
    if extended:
        components.update({6: "cross", 7: "wave"})
        categories.update(
            {
                12: [p(6, 0.5, 0.5, 0.7)],
                13: [p(0, 0.5, 0.5, 0.74), p(6, 0.5, 0.5, 0.4)],
                14: [p(7, 0.5, 0.5, 0.72)],
                15: [p(1, 0.5, 0.35, 0.5), p(7, 0.5, 0.8, 0.6)],
            }
        )
        names.update({12: "cross", 13: "box+cross", 14: "wave", 15: "circle+wave"})
    # the point stream sees jitter raw while the fat raster line mostly
    # absorbs it, so heavy-jitter styles stress segmentation more than
    # recognition
    styles = [
        StyleSpec("s0", slant=0.0, scale=1.0, jitter_mul=1.0),
        StyleSpec("s1", slant=0.08, scale=0.94, jitter_mul=1.25),
        StyleSpec("s2", slant=-0.06, scale=1.04, jitter_mul=1.5),
        StyleSpec("shifted", slant=0.55, scale=0.8, jitter_mul=1.9),
    ]
    return SynthSpec(
        components=components,
        categories=categories,
        category_names=names,
        styles=styles,
    )
