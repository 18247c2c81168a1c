"""Exception hierarchy shared by every module."""


class PidSteerError(Exception):
    pass


class InvalidInputError(PidSteerError, ValueError):
    pass


class UnstableSystemError(PidSteerError):
    pass


class NearSingularError(PidSteerError):
    pass


class DegenerateDirectionError(PidSteerError, ValueError):
    pass


class InsufficientTraceError(PidSteerError):
    pass


class InvalidCertificateError(PidSteerError):
    pass


class DivergenceError(PidSteerError):
    """A simulated state became non-finite."""

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"state diverged at step {self.step}")
