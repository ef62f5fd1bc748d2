"""Exception types shared across the toolkit.

Argument validation raises plain ``ValueError``; the classes here cover
failures that callers may want to distinguish from bad arguments.
"""


class FormatError(ValueError):
    """A file or byte stream does not conform to its declared format."""


class StateError(RuntimeError):
    """An operation was invoked on an object in the wrong state
    (e.g. subsampled chroma where full resolution is required)."""


class TrainingError(RuntimeError):
    """Optimization failed, e.g. the loss became non-finite."""
