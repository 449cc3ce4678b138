"""Exception hierarchy shared by every coneflow module."""


class ConeflowError(Exception):
    """Base class for all errors raised by coneflow."""


class DomainError(ConeflowError):
    pass


class DegenerateBoundaryError(DomainError):
    """The cone boundary is (nearly) null: |1 - (N.z)^2| below the margin."""


class NonConvexError(DomainError):
    pass


class MixedSignatureError(DomainError):
    pass


class MeshError(ConeflowError):
    pass


class NotSpacelikeError(ConeflowError):
    """Raised when (1 + xi.Drho)^2 - |Drho|^2 <= 0 at some node."""

    def __init__(self, message, nodes=None):
        super().__init__(message)
        self.nodes = nodes


class BoundarySolveError(ConeflowError):
    pass


class ObliquenessError(BoundarySolveError):
    pass


class StepFailure(ConeflowError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class InitialDataRejected(ConeflowError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConvergenceTimeout(ConeflowError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class ConfigError(ConeflowError):
    pass


class DataError(ConeflowError):
    pass
