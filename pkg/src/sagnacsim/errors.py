"""Exception hierarchy.

Validation problems (bad input data or parameters) derive from
:class:`ValidationError` and map to CLI exit code 2; numerical failures
derive from :class:`NumericalError` and map to exit code 3.
"""


class SagnacError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(SagnacError, ValueError):
    exit_code = 2


class NumericalError(SagnacError, ArithmeticError):
    exit_code = 3


class ParseError(ValidationError):
    def __init__(self, reason, line=None, column=None, path=None):
        self.reason = reason
        self.line = line
        self.column = column
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {reason}" if prefix else reason)


class SchemaMismatch(ParseError):
    pass


class InvalidParams(ValidationError):
    pass


class UnknownSet(ValidationError):
    pass


class MissingSetting(ValidationError):
    pass


class ZeroSingles(ValidationError):
    pass


class NonpositiveLength(ValidationError):
    pass


class ZeroTrace(NumericalError):
    pass


class NumericalFailure(NumericalError):
    pass


class DegenerateCurve(NumericalError):
    pass


class FitDiverged(NumericalError):
    pass


class ZeroTotal(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class Infeasible(NumericalError):
    pass


class NotConvergedWarning(RuntimeWarning):
    """Emitted when maximum-likelihood optimisation stops before the
    gradient tolerance is reached. The result is still returned."""


class StageError(SagnacError):
    """Wraps an error raised inside one stage of the full characterization."""

    def __init__(self, stage, error):
        self.stage = stage
        self.error = error
        if isinstance(error, SagnacError):
            self.exit_code = error.exit_code
        elif isinstance(error, ArithmeticError):
            self.exit_code = NumericalError.exit_code
        else:
            # unreadable files and malformed values are input problems
            self.exit_code = ValidationError.exit_code
        super().__init__(f"[{stage}] {error}")
