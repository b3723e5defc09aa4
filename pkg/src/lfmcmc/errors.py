"""Exception types shared across the package."""


class LfmcmcError(Exception):
    """Base class for all package errors."""


class ConfigError(LfmcmcError):
    """Invalid run configuration or manifest (CLI exit code 2)."""


class SimulatorDomainError(LfmcmcError):
    """Parameters violate the simulator's domain constraints."""


class SimulationFailureError(LfmcmcError):
    """Simulator produced a non-finite result; callers treat the proposal as rejected."""


class InsufficientSamplesError(LfmcmcError):
    """Moment estimation requires at least two samples."""


class NumericalDegeneracyError(LfmcmcError):
    """Matrix factorization failed even after the maximum ridge (CLI exit code 3).

    Carries the largest jitter that was attempted.
    """

    def __init__(self, message: str, attempted_ridge: float = 0.0):
        super().__init__(message)
        self.attempted_ridge = attempted_ridge
