"""Exception hierarchy shared by every hnirm module."""


class HnirmError(Exception):
    """Base class for all package errors."""


class ValidationError(HnirmError, ValueError):
    """Input data or configuration violates a documented precondition."""


class ParseError(ValidationError):
    """A CSV row could not be parsed.

    Attributes
    ----------
    line : int
        1-based line number in the source file (the header is line 1).
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(ValidationError):
    """Columns or item lists are inconsistent."""


class DomainError(ValidationError):
    """A value lies outside its declared range."""


class DimensionError(ValidationError):
    """Too few objects for the requested embedding dimension."""


class UnsupportedCombinationError(ValidationError):
    pass


class InsufficientSamplesError(ValidationError):
    pass


class ResolutionError(HnirmError):
    """A grid is too coarse for a stable trapezoid normalisation."""


class InitializationError(HnirmError):
    """The chain cannot start because the initial log-posterior is not finite."""


class SamplerError(HnirmError):
    """The chain produced a non-finite state.

    Attributes
    ----------
    iteration : int
        0-based iteration at which the problem was detected.
    """

    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
