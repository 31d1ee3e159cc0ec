"""SVG ingestion: a path/polyline subset of SVG 1.1.

Only ``<path>`` and ``<polyline>`` elements are drawable; everything else is
ignored. Ancestor ``transform`` attributes (matrix/translate/scale/rotate)
are applied so grouped exports land where they were drawn. Coordinates stay
in source units; run `geometry.normalize` afterwards.

Each subpath (segment started by an M/m command) becomes its own stroke:
a new M is a pen lift, and a stroke is one unbroken pen trajectory.

Curve flattening contract
-------------------------
Curves are flattened by uniform parameter subdivision with a deterministic
segment count, so the output point count is reproducible from the control
points alone:

* cubic (and elevated quadratic) with controls p0..p3:
  ``m2 = max(|p0 - 2*p1 + p2|, |p1 - 2*p2 + p3|)`` bounds the second
  derivative by ``6*m2``; an ``n``-segment chordal polyline deviates at most
  ``0.75 * m2 / n**2``, so ``n = ceil(sqrt(0.75 * m2 / tol))`` (at least 1).
* elliptical arc: sagitta of one chord over angle ``t`` is at most
  ``r_max * (1 - cos(t/2))``; with ``t_max = 2*acos(1 - tol/r_max)`` the
  count is ``n = ceil(|sweep| / t_max)`` (at least 1).

``tol`` defaults to 0.5 source units.
"""

from __future__ import annotations

import math
import re
import xml.etree.ElementTree as ET

from .errors import EmptySketchError, SketchParseError
from .geometry import Point, Sketch, Stroke

DEFAULT_FLATTEN_TOL = 0.5

_NUMBER = re.compile(r"[-+]?(?:\d*\.\d+|\d+\.?)(?:[eE][-+]?\d+)?")
_TRANSFORM = re.compile(r"(matrix|translate|scale|rotate)\s*\(([^)]*)\)")

# 2x3 affine: (a, b, c, d, e, f) maps (x, y) -> (a*x + c*y + e, b*x + d*y + f)
_IDENTITY = (1.0, 0.0, 0.0, 1.0, 0.0, 0.0)


def _compose(m1, m2):
    a1, b1, c1, d1, e1, f1 = m1
    a2, b2, c2, d2, e2, f2 = m2
    return (
        a1 * a2 + c1 * b2,
        b1 * a2 + d1 * b2,
        a1 * c2 + c1 * d2,
        b1 * c2 + d1 * d2,
        a1 * e2 + c1 * f2 + e1,
        b1 * e2 + d1 * f2 + f1,
    )


def _apply(m, x: float, y: float) -> tuple[float, float]:
    a, b, c, d, e, f = m
    return a * x + c * y + e, b * x + d * y + f


def _parse_transform(text: str):
    m = _IDENTITY
    for kind, args in _TRANSFORM.findall(text):
        vals = [float(v) for v in _NUMBER.findall(args)]
        if kind == "matrix" and len(vals) == 6:
            t = tuple(vals)
        elif kind == "translate":
            tx = vals[0] if vals else 0.0
            ty = vals[1] if len(vals) > 1 else 0.0
            t = (1.0, 0.0, 0.0, 1.0, tx, ty)
        elif kind == "scale":
            sx = vals[0] if vals else 1.0
            sy = vals[1] if len(vals) > 1 else sx
            t = (sx, 0.0, 0.0, sy, 0.0, 0.0)
        elif kind == "rotate":
            ang = math.radians(vals[0]) if vals else 0.0
            cos, sin = math.cos(ang), math.sin(ang)
            t = (cos, sin, -sin, cos, 0.0, 0.0)
            if len(vals) >= 3:
                cx, cy = vals[1], vals[2]
                t = _compose(
                    _compose((1, 0, 0, 1, cx, cy), t), (1, 0, 0, 1, -cx, -cy)
                )
        else:
            continue
        m = _compose(m, t)
    return m


def cubic_segments(p0, p1, p2, p3, tol: float) -> int:
    """Segment count for a cubic per the module flattening contract."""
    m2 = max(
        math.hypot(p0[0] - 2 * p1[0] + p2[0], p0[1] - 2 * p1[1] + p2[1]),
        math.hypot(p1[0] - 2 * p2[0] + p3[0], p1[1] - 2 * p2[1] + p3[1]),
    )
    if m2 <= 0.0:
        return 1
    return max(1, math.ceil(math.sqrt(0.75 * m2 / tol)))


def _cubic_point(p0, p1, p2, p3, t: float) -> tuple[float, float]:
    u = 1.0 - t
    a, b, c, d = u * u * u, 3 * u * u * t, 3 * u * t * t, t * t * t
    return (
        a * p0[0] + b * p1[0] + c * p2[0] + d * p3[0],
        a * p0[1] + b * p1[1] + c * p2[1] + d * p3[1],
    )


def flatten_cubic(p0, p1, p2, p3, tol: float) -> list[tuple[float, float]]:
    """Points after p0 (p0 itself is the current position, already emitted)."""
    n = cubic_segments(p0, p1, p2, p3, tol)
    return [_cubic_point(p0, p1, p2, p3, i / n) for i in range(1, n + 1)]


def _arc_points(cur, rx, ry, rot_deg, large, sweep, end, tol):
    """Endpoint-to-center conversion (SVG 1.1 appendix F.6.5), then uniform
    angle subdivision per the module flattening contract."""
    x1, y1 = cur
    x2, y2 = end
    if (x1, y1) == (x2, y2):
        return []
    rx, ry = abs(rx), abs(ry)
    if rx == 0 or ry == 0:
        return [end]
    phi = math.radians(rot_deg)
    cosp, sinp = math.cos(phi), math.sin(phi)
    dx, dy = (x1 - x2) / 2.0, (y1 - y2) / 2.0
    x1p = cosp * dx + sinp * dy
    y1p = -sinp * dx + cosp * dy
    lam = (x1p / rx) ** 2 + (y1p / ry) ** 2
    if lam > 1.0:
        s = math.sqrt(lam)
        rx, ry = rx * s, ry * s
    num = rx * rx * ry * ry - rx * rx * y1p * y1p - ry * ry * x1p * x1p
    den = rx * rx * y1p * y1p + ry * ry * x1p * x1p
    coef = math.sqrt(max(0.0, num / den)) if den else 0.0
    if large == sweep:
        coef = -coef
    cxp = coef * rx * y1p / ry
    cyp = -coef * ry * x1p / rx
    cx = cosp * cxp - sinp * cyp + (x1 + x2) / 2.0
    cy = sinp * cxp + cosp * cyp + (y1 + y2) / 2.0

    def angle(ux, uy, vx, vy):
        dot = ux * vx + uy * vy
        mag = math.hypot(ux, uy) * math.hypot(vx, vy)
        ang = math.acos(max(-1.0, min(1.0, dot / mag)))
        if ux * vy - uy * vx < 0:
            ang = -ang
        return ang

    theta1 = angle(1.0, 0.0, (x1p - cxp) / rx, (y1p - cyp) / ry)
    dtheta = angle(
        (x1p - cxp) / rx, (y1p - cyp) / ry, (-x1p - cxp) / rx, (-y1p - cyp) / ry
    )
    if not sweep and dtheta > 0:
        dtheta -= 2 * math.pi
    elif sweep and dtheta < 0:
        dtheta += 2 * math.pi

    r_max = max(rx, ry)
    t_max = 2 * math.acos(max(-1.0, 1.0 - tol / r_max)) if tol < 2 * r_max else math.pi
    n = max(1, math.ceil(abs(dtheta) / t_max)) if t_max > 0 else 1
    pts = []
    for i in range(1, n + 1):
        th = theta1 + dtheta * i / n
        xp, yp = rx * math.cos(th), ry * math.sin(th)
        pts.append((cosp * xp - sinp * yp + cx, sinp * xp + cosp * yp + cy))
    pts[-1] = end  # avoid drift on the final point
    return pts


class _PathScanner:
    """Tokenizer over SVG path data (commands, numbers, arc flags)."""

    def __init__(self, data: str):
        self.data = data
        self.pos = 0

    def _skip(self) -> None:
        while self.pos < len(self.data) and (
            self.data[self.pos].isspace() or self.data[self.pos] == ","
        ):
            self.pos += 1

    def command(self) -> str | None:
        self._skip()
        if self.pos >= len(self.data):
            return None
        ch = self.data[self.pos]
        if ch.isalpha():
            self.pos += 1
            return ch
        return None  # implicit command repeat

    def number(self) -> float:
        self._skip()
        m = _NUMBER.match(self.data, self.pos)
        if not m:
            raise SketchParseError(
                f"expected number at offset {self.pos} in path data"
            )
        self.pos = m.end()
        return float(m.group())

    def flag(self) -> int:
        self._skip()
        if self.pos >= len(self.data) or self.data[self.pos] not in "01":
            raise SketchParseError(f"expected arc flag at offset {self.pos}")
        ch = self.data[self.pos]
        self.pos += 1
        return int(ch)

    def at_end(self) -> bool:
        self._skip()
        return self.pos >= len(self.data)


def parse_path_data(data: str, tol: float = DEFAULT_FLATTEN_TOL) -> list[list[tuple[float, float]]]:
    """Flatten SVG path data into one point list per subpath."""
    sc = _PathScanner(data)
    subpaths: list[list[tuple[float, float]]] = []
    current: list[tuple[float, float]] = []
    cur = (0.0, 0.0)
    start = (0.0, 0.0)
    last_cmd = ""
    last_ctrl: tuple[float, float] | None = None  # reflected control support

    def begin(pt):
        nonlocal current, cur, start
        if len(current) >= 1:
            subpaths.append(current)
        current = [pt]
        cur = pt
        start = pt

    def line_to(pt):
        nonlocal cur
        current.append(pt)
        cur = pt

    while not sc.at_end():
        cmd = sc.command()
        if cmd is None:
            if not last_cmd:
                raise SketchParseError("path data does not start with a command")
            # Implicit repetition; M/m repeats as L/l.
            cmd = {"M": "L", "m": "l"}.get(last_cmd, last_cmd)
        rel = cmd.islower()
        op = cmd.upper()
        if op == "M":
            x, y = sc.number(), sc.number()
            if rel:
                x, y = cur[0] + x, cur[1] + y
            begin((x, y))
            last_ctrl = None
        elif op == "Z":
            if current and current[0] != cur:
                line_to(start)
            cur = start
            last_ctrl = None
        elif op == "L":
            x, y = sc.number(), sc.number()
            if rel:
                x, y = cur[0] + x, cur[1] + y
            line_to((x, y))
            last_ctrl = None
        elif op == "H":
            x = sc.number()
            line_to((cur[0] + x if rel else x, cur[1]))
            last_ctrl = None
        elif op == "V":
            y = sc.number()
            line_to((cur[0], cur[1] + y if rel else y))
            last_ctrl = None
        elif op in ("C", "S"):
            if op == "C":
                c1 = (sc.number(), sc.number())
                if rel:
                    c1 = (cur[0] + c1[0], cur[1] + c1[1])
            else:
                if last_cmd.upper() in ("C", "S") and last_ctrl is not None:
                    c1 = (2 * cur[0] - last_ctrl[0], 2 * cur[1] - last_ctrl[1])
                else:
                    c1 = cur
            c2 = (sc.number(), sc.number())
            end = (sc.number(), sc.number())
            if rel:
                c2 = (cur[0] + c2[0], cur[1] + c2[1])
                end = (cur[0] + end[0], cur[1] + end[1])
            for pt in flatten_cubic(cur, c1, c2, end, tol):
                line_to(pt)
            last_ctrl = c2
        elif op in ("Q", "T"):
            if op == "Q":
                q1 = (sc.number(), sc.number())
                if rel:
                    q1 = (cur[0] + q1[0], cur[1] + q1[1])
            else:
                if last_cmd.upper() in ("Q", "T") and last_ctrl is not None:
                    q1 = (2 * cur[0] - last_ctrl[0], 2 * cur[1] - last_ctrl[1])
                else:
                    q1 = cur
            end = (sc.number(), sc.number())
            if rel:
                end = (cur[0] + end[0], cur[1] + end[1])
            # Degree elevation to cubic.
            c1 = (cur[0] + 2.0 / 3.0 * (q1[0] - cur[0]), cur[1] + 2.0 / 3.0 * (q1[1] - cur[1]))
            c2 = (end[0] + 2.0 / 3.0 * (q1[0] - end[0]), end[1] + 2.0 / 3.0 * (q1[1] - end[1]))
            for pt in flatten_cubic(cur, c1, c2, end, tol):
                line_to(pt)
            last_ctrl = q1
        elif op == "A":
            rx, ry, rot = sc.number(), sc.number(), sc.number()
            large, sweep = sc.flag(), sc.flag()
            end = (sc.number(), sc.number())
            if rel:
                end = (cur[0] + end[0], cur[1] + end[1])
            for pt in _arc_points(cur, rx, ry, rot, large, sweep, end, tol):
                line_to(pt)
            last_ctrl = None
        else:
            raise SketchParseError(f"unsupported path command {cmd!r}")
        last_cmd = cmd
    if len(current) >= 1:
        subpaths.append(current)
    return [sp for sp in subpaths if sp]


def _local_name(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _collect(elem, xform, out, tol):
    own = elem.get("transform")
    if own:
        xform = _compose(xform, _parse_transform(own))
    name = _local_name(elem.tag)
    if name == "path":
        data = elem.get("d", "")
        for sp in parse_path_data(data, tol):
            out.append([_apply(xform, x, y) for x, y in sp])
    elif name == "polyline":
        nums = [float(v) for v in _NUMBER.findall(elem.get("points", ""))]
        pts = [(nums[i], nums[i + 1]) for i in range(0, len(nums) - 1, 2)]
        if pts:
            out.append([_apply(xform, x, y) for x, y in pts])
    for child in elem:
        _collect(child, xform, out, tol)


def parse_svg(svg_text: str, tol: float = DEFAULT_FLATTEN_TOL) -> Sketch:
    """Parse SVG text into a Sketch (one stroke per path subpath / polyline).

    Raises SketchParseError on malformed XML and EmptySketchError when no
    drawable path/polyline is present.
    """
    try:
        root = ET.fromstring(svg_text)
    except ET.ParseError as exc:
        raise SketchParseError(f"malformed SVG: {exc}") from exc
    raw: list[list[tuple[float, float]]] = []
    _collect(root, _IDENTITY, raw, tol)
    strokes = [
        Stroke([Point(x, y) for x, y in pts]) for pts in raw if pts
    ]
    if not strokes:
        raise EmptySketchError("SVG contains no drawable path or polyline")
    return Sketch(strokes)


def serialize_svg(sketch: Sketch, stroke_width: float = 1.0) -> str:
    """Emit a sketch as SVG polylines (round-trips through parse_svg)."""
    x0, y0, x1, y1 = sketch.bbox()
    pad = 0.05 * max(x1 - x0, y1 - y0, 1e-9)
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{x0 - pad} {y0 - pad} {x1 - x0 + 2 * pad} {y1 - y0 + 2 * pad}">'
    ]
    for stroke in sketch.strokes:
        pts = " ".join(f"{p.x:.9g},{p.y:.9g}" for p in stroke.points)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="black" '
            f'stroke-width="{stroke_width}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
