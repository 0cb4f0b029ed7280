"""Exception hierarchy shared by every service module."""

from typing import Any, Optional

import numpy as np


class LabError(Exception):
    """Base class for all errors raised by the lab."""


class ConfigError(LabError):
    """Invalid scenario configuration; `key` names the offending entry."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class ArtifactError(LabError):
    """A report artifact is missing or unreadable."""


class StencilError(LabError):
    """A finite-difference stencil is degenerate (coincident samples)."""


class GeometryError(LabError):
    """A surface violates its invariants (orientation, positivity, immersion)."""


class GraphFailureError(GeometryError):
    """The surface is not a graph over the requested cylinder."""

    def __init__(self, message: str, sample_index: int, point: Any = None):
        super().__init__(message)
        self.sample_index = sample_index
        self.point = None if point is None else np.asarray(point, dtype=float)


class StepSizeError(LabError):
    """Requested time step exceeds the CFL bound."""

    def __init__(self, dt: float, bound: float):
        super().__init__(f"time step {dt:.3e} exceeds CFL bound {bound:.3e}")
        self.dt = dt
        self.bound = bound


class StepRejectedError(LabError):
    """A step would destroy mean convexity of a mean-convex input."""


class SingularityDetected(LabError):
    """Curvature blow-up: max|H|*h crossed the stencil validity threshold."""

    def __init__(self, location: Any, time: float, curvature: float):
        super().__init__(f"singularity near {np.round(np.asarray(location), 6).tolist()} "
                         f"at time {time:.6g} (max|H| = {curvature:.4g})")
        self.location = np.asarray(location, dtype=float)
        self.time = float(time)
        self.curvature = float(curvature)


class DependencyError(LabError):
    """A required upstream result (e.g. a cylinder fit) is missing."""


class PartialFieldError(LabError):
    """The flow stopped before sweeping the whole domain."""

    def __init__(self, message: str, unswept: np.ndarray, field: Any = None):
        super().__init__(message)
        self.unswept = unswept
        self.field = field


class BoundaryError(LabError):
    """A stencil leaves the region where the field is defined."""


class IllConditionedFitError(LabError):
    """A regression does not have enough samples or dynamic range."""


class ResolutionError(LabError):
    """Too few samples in the asymptotic window to report a limit."""


class DomainExitError(LabError):
    """A trajectory left the domain of the field."""

    def __init__(self, message: str, point: Any):
        super().__init__(message)
        self.point = np.asarray(point, dtype=float)


class BudgetError(LabError):
    """An integrator ran out of its time/step budget."""


class DomainError(LabError):
    """A function is not defined on a large enough region."""


class DegenerateError(LabError):
    """A quantity that must be positive (e.g. I(r)) vanished."""
