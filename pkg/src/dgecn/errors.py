"""Exception hierarchy shared by every module."""


class DgecnError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DgecnError, ValueError):
    """Bad input value or configuration."""


class PointBehindCamera(ValidationError):
    pass


class InvalidDepth(ValidationError):
    pass


class DegenerateInput(ValidationError):
    pass


class TooFewVertices(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class InvalidCount(ValidationError):
    pass


class InvalidSeed(ValidationError):
    pass


class InvalidRadius(ValidationError):
    pass


class InvalidSigma(ValidationError):
    pass


class InvalidRate(ValidationError):
    pass


class SphereBehindCamera(ValidationError):
    pass


class TooFewPoints(ValidationError):
    pass


class DegenerateConfiguration(ValidationError):
    pass


class NoConsensus(DgecnError):
    pass


class ClusterTooSmall(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ProbabilityOutOfRange(ValidationError):
    pass


class TapeMismatch(DgecnError):
    pass


class NonFiniteLoss(DgecnError, FloatingPointError):
    pass


class InsufficientNeighbors(ValidationError):
    pass


class IoError(DgecnError, OSError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CountMismatch(ValidationError):
    pass
