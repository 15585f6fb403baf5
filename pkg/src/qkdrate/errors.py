"""Exception types raised across the package."""


class QKDError(Exception):
    """Base class for all package errors."""


class ValidationError(QKDError, ValueError):
    """An input violates a documented range or invariant."""


class DomainError(ValidationError):
    """A numeric argument lies outside the function's domain."""


class DegenerateScenarioError(QKDError):
    """A conditional quantity is undefined, e.g. zero detection probability."""


class NoPositiveRateError(QKDError):
    """The selected key-rate bound is not positive even at zero distance."""


class InsufficientDataError(QKDError):
    """Tallies or observations are too sparse for the requested estimate."""


class OrderingError(QKDError, ValueError):
    """Decoy intensities are not in the required order."""


class InfeasibleError(QKDError):
    """Observed statistics admit no photon-number yields.

    ``violated`` names the intensities whose gain or error sandwich had to be
    relaxed to restore feasibility.
    """

    def __init__(self, message, violated=()):
        super().__init__(message)
        self.violated = tuple(violated)
