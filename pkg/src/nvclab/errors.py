"""Exception hierarchy shared across the package."""


class FormatError(ValueError):
    """Input data violates a structural constraint (dimensions, layout, ranges)."""


class ParseError(FormatError):
    """A header or container could not be parsed at all."""


class DecodeError(RuntimeError):
    """A bitstream payload could not be decoded (truncation, corruption)."""


class ModelMismatchError(DecodeError):
    """The bitstream was produced by a different model than the one supplied."""


class RangeCoderError(DecodeError):
    """A symbol fell outside the modeled support of the entropy coder."""


class DomainError(ValueError):
    """A metric was requested outside its mathematical domain."""


class ScheduleError(ValueError):
    """A GoP enhancement schedule cannot be built from the given roles."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss and was aborted."""
