"""Typed errors raised across the workbench.

Every failure surfaced to callers derives from :class:`RvqLabError`, so the
CLI (and fuzz harnesses) can catch one base class and still report the
specific condition.
"""


class RvqLabError(Exception):
    """Base class for all errors raised by rvqlab."""


class EmptyInput(RvqLabError):
    """An operation received an empty signal or dataset."""


class InvalidInput(RvqLabError):
    """An argument violates an operation's precondition."""


class InvalidConfig(RvqLabError):
    """A configuration object is internally inconsistent or incompatible."""


class SampleRateMismatch(RvqLabError):
    """Two signals (or a signal and a model) disagree on sample rate."""


class InsufficientData(RvqLabError):
    """Not enough training frames / scores to fit or summarize."""


class InsufficientDuration(RvqLabError):
    """A signal is too short for the requested analysis."""


class CorruptModel(RvqLabError):
    """A model container failed structural validation."""


class NotABitstream(RvqLabError):
    """Bytes do not start with a recognized stream header."""


class Truncated(RvqLabError):
    """A stream payload is shorter than its header declares."""

    def __init__(self, expected, got):
        super().__init__(f"truncated payload: expected {expected} bytes, got {got}")
        self.expected = expected
        self.got = got


class CorruptPadding(RvqLabError):
    """Padding bits at the end of a packed payload are not zero."""


class CorruptTokens(RvqLabError):
    """A token stream contains an out-of-range codeword index."""


class SchemaError(RvqLabError):
    """A manifest or score file does not match its documented schema."""


class MissingFile(RvqLabError):
    """A file referenced by a manifest does not exist."""

    def __init__(self, path):
        super().__init__(f"missing audio file: {path}")
        self.path = path


class EmptyCategory(RvqLabError):
    """A quality category required for balanced sampling has no entries."""

    def __init__(self, name):
        super().__init__(f"category {name} has no manifest entries")
        self.name = name


class NotDivisible(RvqLabError):
    """Batch size is not divisible by the number of active categories."""


class WavError(RvqLabError):
    """A WAV file is malformed or uses an unsupported layout."""


class ExternalToolError(RvqLabError):
    """An external metric tool failed or produced unparseable output."""


class EvaluationFailed(RvqLabError):
    """Too many per-file failures during an evaluation run."""
