"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class OpalgError(Exception):
    """Base class; ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = 2


class ValidationError(OpalgError):
    exit_code = 2


class ShapeError(ValidationError):
    pass


class WeightSumError(ValidationError):
    pass


class MassError(ValidationError):
    pass


class NotSelfAdjoint(ValidationError):
    pass


class NotAModule(ValidationError):
    pass


class IdentificationError(ValidationError):
    pass


class NotAutomorphism(ValidationError):
    pass


class NotTracePreserving(ValidationError):
    pass


class RelationViolated(ValidationError):
    pass


class SubalgebraNotInvariant(ValidationError):
    pass


class NotCentral(ValidationError):
    pass


class NotErgodic(ValidationError):
    pass


class NotAbelian(ValidationError):
    pass


class FaceError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.field = field
        self.line = line


class UnknownCommand(ValidationError):
    pass


class NumericalFailure(OpalgError):
    exit_code = 3


class PositivityViolation(NumericalFailure):
    pass


class NotAnAlgebra(NumericalFailure):
    pass


class CPViolation(NumericalFailure):
    pass


class IterationLimit(NumericalFailure):
    pass


class BudgetExceeded(OpalgError):
    exit_code = 4
