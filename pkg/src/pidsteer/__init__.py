"""Controller-based activation steering: simulation and certification."""

from .errors import (
    DegenerateDirectionError,
    DivergenceError,
    InsufficientTraceError,
    InvalidCertificateError,
    InvalidInputError,
    NearSingularError,
    PidSteerError,
    UnstableSystemError,
)

__version__ = "0.1.0"
