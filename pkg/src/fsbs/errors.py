"""Exception hierarchy shared by every fsbs module."""


class FsbsError(Exception):
    """Base class for all library errors."""


class ParamError(FsbsError, ValueError):
    """Parameters violate a construction requirement."""


class NoSolutionOrRankDeficient(FsbsError, ArithmeticError):
    pass


class DegenerateBasis(FsbsError, ArithmeticError):
    pass


class WidthTooSmall(FsbsError, ValueError):
    pass


class InvalidTrapdoor(FsbsError, ValueError):
    pass


class NotAnAncestor(FsbsError, ValueError):
    pass


class LastPeriod(FsbsError):
    """Raised when evolving a key that is already past the final period."""


class TimeMismatch(FsbsError, ValueError):
    pass


class ProtocolViolation(FsbsError):
    pass


class RestartLimitExceeded(FsbsError):
    pass


class InternalError(FsbsError, RuntimeError):
    pass


class FormatError(FsbsError, ValueError):
    """A serialized object could not be parsed."""


class DecodeError(FormatError):
    """Malformed wire frame. ``reason`` is one of truncated, bad-kind, oversize, trailing."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)
