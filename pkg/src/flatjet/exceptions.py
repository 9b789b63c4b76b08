"""Exception hierarchy shared by the library and the command line front-end."""


class FlatJetError(Exception):
    """Base class for all errors raised by :mod:`flatjet`."""

    exit_code = 1


class DataError(FlatJetError, ValueError):
    """Input data violates a precondition (schema, sign, duplicate points...)."""

    exit_code = 2


class NotFlatError(DataError):
    """A jet or field has an infinite flat seminorm."""


class NumericalError(FlatJetError, ArithmeticError):
    """A numerical procedure could not reach its target (refinement, bisection)."""

    exit_code = 3
