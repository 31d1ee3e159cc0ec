"""Deterministic anti-aliased rendering of resampled sketches.

Strokes are drawn as polylines on a supersampled grayscale canvas and box-
downsampled, which gives stable anti-aliasing without platform-dependent
rendering paths. The single channel is replicated to three so image
backbones keep their usual input shape. Ink is 1.0 on a 0.0 background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from .resample import ResampledSketch


@dataclass(frozen=True)
class RenderConfig:
    height: int = 224
    width: int = 224
    line_width: float = 2.0
    padding: float = 0.04  # fraction of the canvas kept clear on each side
    supersample: int = 4


def rasterize(rs: ResampledSketch, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Render to a (3, height, width) float32 array with values in [0, 1].

    Expects normalized coordinates; anything outside [0,1] is clipped by the
    canvas. Dots render as filled discs of the stroke width.
    """
    ss = cfg.supersample
    big_w, big_h = cfg.width * ss, cfg.height * ss
    img = Image.new("L", (big_w, big_h), 0)
    draw = ImageDraw.Draw(img)
    lw = max(1, round(cfg.line_width * ss))

    def to_px(x: float, y: float) -> tuple[float, float]:
        px = (cfg.padding + x * (1 - 2 * cfg.padding)) * (big_w - 1)
        py = (cfg.padding + y * (1 - 2 * cfg.padding)) * (big_h - 1)
        return px, py

    if rs.n_points:
        for j in range(rs.n_strokes):
            pts = rs.points[rs.stroke_of_point == j]
            pix = [to_px(x, y) for x, y in pts]
            if len(pix) == 1 or all(p == pix[0] for p in pix):
                x, y = pix[0]
                r = lw / 2.0
                draw.ellipse([x - r, y - r, x + r, y + r], fill=255)
            else:
                draw.line(pix, fill=255, width=lw, joint="curve")

    small = img.resize((cfg.width, cfg.height), Image.BOX)
    gray = np.asarray(small, dtype=np.float32) / 255.0
    return np.repeat(gray[None, :, :], 3, axis=0)
