"""Exception hierarchy shared by all msdelearn modules."""


class MsdeError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolationError(MsdeError):
    """An input breaks a documented interface contract (shape, symmetry, range)."""


class ConfigurationError(MsdeError):
    """An experiment configuration is missing, malformed, or inconsistent."""


class SimulationError(MsdeError):
    """Numerical failure during time integration (blow-up, non-finite state).

    Carries the first offending trajectory index and the time at which it
    was detected.
    """

    def __init__(self, message: str, trajectory: int | None = None,
                 time: float | None = None):
        super().__init__(message)
        self.trajectory = trajectory
        self.time = time


class IllConditioningError(MsdeError):
    """A least-squares system is singular and no regularization was requested."""
