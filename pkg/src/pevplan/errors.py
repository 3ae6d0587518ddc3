"""Exception types shared across the package."""


class PevPlanError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PevPlanError):
    """Input data violates a documented invariant."""


class UnreachableODError(PevPlanError):
    """An origin-destination pair has no connecting route."""

    def __init__(self, origin, destination):
        self.origin = origin
        self.destination = destination
        super().__init__(f"no route from node {origin} to node {destination}")


class InfeasibleRangeError(PevPlanError):
    """A vehicle type cannot traverse a path under its driving range.

    Carries the offending window so the instance can be reported
    instead of silently dropped.
    """

    def __init__(self, message, *, window=None, path=None, pev_type=None):
        self.window = window
        self.path = path
        self.pev_type = pev_type
        super().__init__(message)


class SolverError(PevPlanError):
    """The conic solver could not produce a trustworthy answer."""
