"""Exception and warning types shared across the package."""


class SpatBoostError(Exception):
    """Base class for all package errors."""


class TopologyError(SpatBoostError, ValueError):
    """Invalid spatial weight structure (self-loops, isolated rows, bad K)."""


class DesignError(SpatBoostError, ValueError):
    """Malformed design matrix or degenerate base-learner column."""


class NonIdentificationError(SpatBoostError):
    """The moment system carries no information about the spatial parameter."""


class RankDeficiencyError(SpatBoostError):
    """Least-squares system is not of full column rank."""


class SingularMatrixError(SpatBoostError):
    """I - lambda W is numerically singular."""


class BoundaryWarning(UserWarning):
    """Moment estimate sits on the edge of the admissible region."""


class DeselectionWarning(UserWarning):
    """Deselection removed every column."""
