"""Exception hierarchy shared by all coolwalk modules."""


class CoolwalkError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(CoolwalkError, ValueError):
    """An input object failed validation.

    ``field`` names the offending field (or atom) so callers such as the CLI
    can report it without parsing the message.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class WeightSum(ValidationError):
    pass


class EllipticityViolated(ValidationError):
    pass


class NotNested(ValidationError):
    pass


class PreconditionError(CoolwalkError, ValueError):
    pass


class PreconditionFlatPiece(PreconditionError):
    """The distribution has no flat piece (mean rho >= 1)."""


class PreconditionNested(PreconditionError):
    """rho never exceeds 1, so <rho^s> = 1 has no root s > 1."""


class WindowTooSmall(CoolwalkError, ValueError):
    pass


class EmptyFinitePart(CoolwalkError, ValueError):
    pass


class MeansUnavailable(CoolwalkError):
    pass


class IntervalTooLongForExactDP(CoolwalkError, ValueError):
    pass


class ParseError(CoolwalkError, ValueError):
    def __init__(self, message, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column
