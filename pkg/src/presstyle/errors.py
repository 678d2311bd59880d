"""Exception hierarchy shared by all presstyle modules."""


class PresstyleError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(PresstyleError, ValueError):
    """Tensor shapes disagree.

    ``dim`` names the offending dimension so callers (and tests) can tell
    which argument was wrong without parsing the message.
    """

    def __init__(self, message, dim=None):
        super().__init__(message)
        self.dim = dim


class GraphError(PresstyleError):
    pass


class NonFiniteGradientError(PresstyleError, FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class FormatError(PresstyleError):
    """Malformed on-disk artifact."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class NegativeCellError(FormatError):
    pass


class AttributeRangeError(PresstyleError, ValueError):
    pass


class ScriptOutOfGridError(PresstyleError):
    def __init__(self, frame, message):
        super().__init__(f"frame {frame}: {message}")
        self.frame = frame


class ManifestError(PresstyleError):
    pass


class DegenerateMetricError(PresstyleError, ZeroDivisionError):
    pass


class TrainingError(PresstyleError):
    pass
