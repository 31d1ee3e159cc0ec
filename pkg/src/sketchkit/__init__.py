"""Sketch recognition + semantic segmentation toolkit: two-stream model,
few-shot style adaptation, class-incremental learning, and a serving API.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    NumericError,
    SketchKitError,
    ValidationError,
)
from .geometry import Point, Sketch, Stroke, load_sketches, normalize, save_sketches
from .knowledge import KnowledgeMatrix, build_knowledge_matrix, load_knowledge
from .resample import ResampledSketch, resample

__all__ = [
    "ConfigError",
    "KnowledgeMatrix",
    "NumericError",
    "Point",
    "ResampledSketch",
    "Sketch",
    "SketchKitError",
    "Stroke",
    "ValidationError",
    "build_knowledge_matrix",
    "load_knowledge",
    "load_sketches",
    "normalize",
    "resample",
    "save_sketches",
]
