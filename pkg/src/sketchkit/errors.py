"""Exception hierarchy.

Validation-type errors map to CLI exit code 2, numeric failures to exit
code 3 (see cli.main).
"""


class SketchKitError(Exception):
    """Base class for all library errors."""


class ValidationError(SketchKitError):
    """Bad input data, configuration, or labels (CLI exit code 2)."""


class SketchParseError(ValidationError):
    """Malformed SVG or sketch record."""


class EmptySketchError(ValidationError):
    """Input contains no drawable strokes."""


class DegenerateSketchError(ValidationError):
    """All points coincide; no normalization possible."""


class CapacityError(ValidationError):
    """Requested point budget cannot cover every stroke."""


class SynthSpecError(ValidationError):
    """Synthetic-corpus spec is inconsistent."""


class KnowledgeError(ValidationError):
    """Category/component mapping is empty or out of range."""


class LabelError(ValidationError):
    """A label id falls outside the configured class counts."""


class ConfigError(ValidationError):
    """Model/training configuration violates an invariant."""


class PlanError(ValidationError):
    """Incremental session plan is inconsistent (class collisions etc.)."""


class ImportError_(ValidationError):
    """Foreign dataset file could not be converted."""


class NumericError(SketchKitError):
    """Non-finite values encountered (CLI exit code 3)."""
