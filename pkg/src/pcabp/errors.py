"""Exception hierarchy shared by every pcabp module."""

from typing import Optional, Tuple


class WorkbenchError(Exception):
    """Base class for all errors raised by the workbench."""


class DomainError(WorkbenchError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class CapacityError(WorkbenchError):
    """An exact enumeration would exceed its configured cap."""

    def __init__(self, message: str, required: float = 0, cap: float = 0):
        super().__init__(message)
        self.required = required
        self.cap = cap


class NotHalfSpaceError(WorkbenchError):
    """An update family does not fit in the lower half-space of any range."""

    def __init__(self, message: str, site: Optional[Tuple[int, ...]] = None):
        super().__init__(message)
        self.site = site


class MarginError(DomainError):
    """A window is too small for the boundary to stay out of the event."""


class UnknownClassificationError(WorkbenchError):
    """Neither the supercritical nor the subcritical test applies."""


class DegenerateFitError(WorkbenchError):
    """Too few usable rows for an exponential fit."""


class MonotonicityError(WorkbenchError):
    """A quantity that must be monotone in the parameter is not."""


class ModelFileError(WorkbenchError):
    """A model file cannot be parsed into a measure or update family."""
