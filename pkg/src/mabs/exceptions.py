"""Exception hierarchy.

Validation problems subclass :class:`ValueError` so callers that only know
numpy/sklearn conventions still catch them. The CLI maps each family onto an
exit status.
"""


class MabsError(Exception):
    """Base class for all package errors."""


class ValidationError(MabsError, ValueError):
    """Malformed or out-of-domain input."""


class InvalidAlphabetError(ValidationError):
    pass


class InvalidWeightsError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class PreconditionError(ValidationError):
    pass


class InfeasibleConstructionError(ValidationError):
    pass


class InfeasiblePerturbationError(ValidationError):
    pass


class InfeasibleConfigError(ValidationError):
    pass


class CapacityError(MabsError):
    """An enumeration would exceed its configured budget."""


class RecoveryError(MabsError):
    """No candidate explanation passed the recovery checks.

    Attributes
    ----------
    best_residual : float
        Smallest maximal row residual seen over all candidates that reached
        the decoding stage (``inf`` if none did).
    best_candidate : tuple of int or None
        Representative indices of that candidate.
    """

    def __init__(self, message, best_residual=float("inf"), best_candidate=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_candidate = best_candidate


class InternalConsistencyError(MabsError):
    """More than one candidate certified where uniqueness is guaranteed."""


class DegenerateFitError(MabsError):
    """Least squares weight fit is rank deficient."""


class SamplingError(MabsError):
    pass


class DeltaTooLargeError(SamplingError):
    def __init__(self, message, acceptance_rate=0.0):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate
