"""Exception hierarchy shared by every module of the package."""


class CRWError(Exception):
    """Base class for all errors raised by crwfield."""


class DimensionMismatch(CRWError, ValueError):
    pass


class NonBinaryConstituency(CRWError, ValueError):
    pass


class NegativeRate(CRWError, ValueError):
    pass


class InvalidRate(CRWError, ValueError):
    """Bernoulli rate outside [0, 1]."""


class TooManyControls(CRWError):
    pass


class LPFailure(CRWError, RuntimeError):
    pass


class DomainError(CRWError, ValueError):
    pass


class InvalidParams(CRWError, ValueError):
    pass


class UnsupportedCombination(CRWError, ValueError):
    pass


class EvaluationError(CRWError, RuntimeError):
    pass


class FieldEvaluationError(EvaluationError):
    pass


class GradientUnavailable(CRWError):
    pass


class EmptyRegion(CRWError):
    pass


class NegativeStateViolation(CRWError, RuntimeError):
    """A MeynRegion step drove some queue below zero."""


class ConfigParseError(CRWError, ValueError):
    pass


class UnknownCheck(CRWError, KeyError):
    pass
