"""Exception types raised across the package."""


class ProgsegError(Exception):
    """Base class for every error raised on purpose by progseg."""


class MalformedRecord(ProgsegError, ValueError):
    """A record in an event or label file could not be parsed.

    ``offset`` is the 1-based line number for text formats and the byte
    offset for binary ones.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at {offset})"
        super().__init__(message)
        self.offset = offset


class OutOfBounds(ProgsegError, ValueError):
    pass


class EmptyFile(ProgsegError, ValueError):
    pass


class InvalidInterval(ProgsegError, ValueError):
    pass


class LengthMismatch(ProgsegError, ValueError):
    pass


class GeometryMismatch(ProgsegError, ValueError):
    pass


class ZeroTimespan(ProgsegError, ValueError):
    pass


class BadWindow(ProgsegError, ValueError):
    pass


class EmptyPacket(ProgsegError, ValueError):
    pass


class DegenerateCorrelation(ProgsegError, ArithmeticError):
    """Every event correlation is zero, so the confidence scale is undefined."""


class SpecInvalid(ProgsegError, ValueError):
    pass
