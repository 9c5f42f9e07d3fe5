"""Exception hierarchy.

Three families, mapped to distinct CLI exit statuses:

* ``DataError`` -- the input file or table is malformed (exit 2).
* ``ParameterError`` -- an argument is outside its domain (exit 2).
* ``StatisticalPreconditionError`` -- inputs are valid but the requested
  quantity is undefined or cannot be bracketed (exit 3).
"""


class CaseSensError(Exception):
    """Base class for all package errors."""


class DataError(CaseSensError, ValueError):
    pass


class MissingCase(DataError):
    pass


class MultipleCases(DataError):
    pass


class NarrowReferent(DataError):
    pass


class BadBinary(DataError):
    pass


class SetTooSmall(DataError):
    pass


class DuplicateSubject(DataError):
    pass


class EmptyStudy(DataError):
    pass


class ParameterError(CaseSensError, ValueError):
    pass


class InvalidGamma(ParameterError):
    pass


class InvalidTheta(ParameterError):
    pass


class InvalidCount(ParameterError):
    pass


class StatisticalPreconditionError(CaseSensError):
    pass


class NoNarrowSets(StatisticalPreconditionError):
    pass


class NoRejectionAtOne(StatisticalPreconditionError):
    pass


class NotBracketed(StatisticalPreconditionError):
    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class Unattainable(StatisticalPreconditionError):
    pass


class InfeasibleStratum(StatisticalPreconditionError):
    pass
