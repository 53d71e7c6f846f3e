"""Exception hierarchy shared by all modules."""


class ArwError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(ArwError, ValueError):
    """Invalid parameters or configuration values."""


class DomainError(ArwError, ValueError):
    """A scale factor was evaluated outside its conformal-time domain."""


class SpacelikeError(ArwError):
    """The graph stopped being spacelike (|Du| too close to 1)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class BarrierError(ArwError):
    """The conformal mean curvature F became non-positive."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class StepFailure(ArwError):
    """The adaptive integrator could not meet its tolerances."""


class FlowError(ArwError):
    """A flow run failed; the trajectory up to the failure is attached."""

    def __init__(self, message, trajectory=None, cause=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.cause = cause


class RecollapseError(ArwError):
    """The Friedmann constraint lost its real root before the singularity."""


class AnalysisError(ArwError, ValueError):
    """Diagnostic series unsuitable for the requested fit or verdict."""
