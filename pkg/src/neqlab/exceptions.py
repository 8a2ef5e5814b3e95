"""Shared exception types."""


class NeqlabError(Exception):
    """Base class for all errors raised by this package."""


class OriginProximityError(NeqlabError):
    """Point too close to the origin: the angular coordinate is undefined."""


class DivergenceError(NeqlabError):
    """A state or loss left the stable region (non-finite or out of bounds)."""

    def __init__(self, message, trajectory=None, step=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.step = step


class GridMismatchError(NeqlabError):
    """Two histograms or fields were built on different grids."""


class EmptySliceError(NeqlabError):
    """A time-slice window contains no trajectory frames."""


class MissingScoreError(NeqlabError):
    """A reverse-time SDE descriptor was used without a score function."""


class StabilityError(NeqlabError):
    """Explicit solver step size violates the stability bound."""


class LeakageError(NeqlabError):
    """Probability mass leaking off the solver grid exceeded the limit."""


class GridCoverageError(NeqlabError):
    """Sample points fall outside the histogram grid."""


class ManifestError(NeqlabError):
    """An experiment manifest references artifacts that do not exist."""
