"""Exception hierarchy shared across the package."""

from __future__ import annotations

from typing import Any


class CeriError(Exception):
    """Base class; ``code`` is a stable machine-readable identifier."""

    code = "CERI_ERROR"


class ValidationError(CeriError):
    code = "VALIDATION_ERROR"

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ParseError(CeriError):
    code = "PARSE_ERROR"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


class PointMassOnThreshold(CeriError):
    code = "POINT_MASS_ON_THRESHOLD"


class EmptyEconomy(CeriError):
    code = "EMPTY_ECONOMY"


class NotConverged(CeriError):
    """Raised by the price solver; ``best`` holds the lowest-residual iterate."""

    code = "NOT_CONVERGED"

    def __init__(self, message: str, best: Any = None):
        self.best = best
        super().__init__(message)


class InfeasibleMarginals(CeriError):
    code = "INFEASIBLE_MARGINALS"


class Infeasible(CeriError):
    code = "INFEASIBLE"


class LPFailure(CeriError):
    code = "LP_FAILURE"


class TooLarge(CeriError):
    code = "TOO_LARGE"


class ZeroMassBundle(CeriError):
    code = "ZERO_MASS_BUNDLE"


class UnknownBundle(CeriError):
    code = "UNKNOWN_BUNDLE"


class NotCertified(CeriError):
    code = "NOT_CERTIFIED"


class NotUnitDemand(CeriError):
    code = "NOT_UNIT_DEMAND"
