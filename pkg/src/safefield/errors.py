"""Exception types shared across the package."""


class SafeFieldError(Exception):
    """Base class for every error raised by this package."""


class NonConvexInput(SafeFieldError):
    """Polygon vertices do not describe a convex region."""


class DegenerateInput(SafeFieldError):
    """Geometric input collapses to lower dimension (repeated points, zero area)."""


class UnboundedPolytope(SafeFieldError):
    """Halfspace set does not bound a finite region."""


class DisconnectedFreeSpace(SafeFieldError):
    """Cell adjacency graph is not connected."""


class NoPath(SafeFieldError):
    """No cell path exists between the requested endpoints."""


class GoalNotVertex(SafeFieldError):
    """Goal point is not placed on the cell decomposition as required."""


class LandmarkOutOfView(SafeFieldError):
    """A cell references a landmark it cannot see."""


class LandmarkNotVisible(SafeFieldError):
    """Landmark offset leaves the measurement grid somewhere in the cell."""


class DimensionMismatch(SafeFieldError):
    """Inconsistent dimensions between coupled inputs."""


class NumericalFailure(SafeFieldError):
    """Solver returned an answer that fails basic sanity checks."""


class SolverFailure(SafeFieldError):
    """LP solver stopped without a usable status."""


class SynthesisInfeasible(SafeFieldError):
    """No gain matrix satisfies the robust constraints for this cell."""


class GoalObservationOffGrid(SafeFieldError):
    """Expected observation at the goal lies outside the measurement grid."""


class InfeasibleMeasurementSet(SafeFieldError):
    """No distribution is consistent with the stated error bounds at this state."""


class VerificationFailed(SafeFieldError):
    """A synthesized controller violates a certified constraint."""

    def __init__(self, message, cell_id=None, x=None, row=None, slack=None):
        super().__init__(message)
        self.cell_id = cell_id
        self.x = x
        self.row = row
        self.slack = slack


class GridMismatch(SafeFieldError):
    """Measurement grid is incompatible with the controller's grid."""


class SafetyViolation(SafeFieldError):
    """Simulated state crossed an obstacle facet."""

    def __init__(self, message, t=None, x=None, cell_id=None, facet=None, trajectory=None):
        super().__init__(message)
        self.t = t
        self.x = x
        self.cell_id = cell_id
        self.facet = facet
        self.trajectory = trajectory


class LeftFreeSpace(SafeFieldError):
    """Simulated state left the union of all cells."""

    def __init__(self, message, t=None, x=None, trajectory=None):
        super().__init__(message)
        self.t = t
        self.x = x
        self.trajectory = trajectory


class ConfigError(SafeFieldError):
    """Bad or missing field in a run configuration."""

    def __init__(self, message, path=None, field=None):
        if path is not None or field is not None:
            message = "%s (file %s, field %s)" % (message, path, field)
        super().__init__(message)
        self.path = path
        self.field = field
