"""Exception hierarchy shared across the package."""


class ClusterTrackError(Exception):
    """Base class for all package errors."""


class InputError(ClusterTrackError, ValueError):
    """Dimension mismatch or otherwise malformed argument."""


class TopologyError(ClusterTrackError):
    """Graph or weight matrix violates a structural requirement."""


class ValidationError(ClusterTrackError):
    """A numerical object fails a property check (e.g. stochasticity)."""


class InfeasibleSetError(ClusterTrackError):
    """No feasible point could be found for a constraint set.

    ``witness`` names the member constraint with the largest violation at the
    last iterate of the feasibility search.
    """

    def __init__(self, message, witness=None, violation=None):
        super().__init__(message)
        self.witness = witness
        self.violation = violation


class ProjectionError(ClusterTrackError):
    """Dykstra's method did not reach the requested tolerance."""

    def __init__(self, message, residual, sweeps):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


class DegenerateConstantsError(ClusterTrackError):
    """Problem constants admit no positive step size."""


class ConfigError(ClusterTrackError):
    """Experiment configuration is malformed; ``field`` names the culprit."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
