"""Exception hierarchy shared by all modules."""


class TrapArrayError(Exception):
    """Base class for package errors."""


class InvalidParameterError(TrapArrayError, ValueError):
    pass


class GeometryError(TrapArrayError):
    """Raised when a constructed layout violates its own invariants."""


class DomainError(TrapArrayError, ValueError):
    """Evaluation point outside the region where the field model is valid."""


class InsufficientDataError(TrapArrayError):
    pass


class SaddleNotMinimumError(TrapArrayError):
    pass


class IntegrationError(TrapArrayError):
    """Non-finite state encountered while integrating a trajectory."""


class NoSolutionError(TrapArrayError):
    pass
