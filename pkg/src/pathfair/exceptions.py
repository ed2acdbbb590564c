"""Exception hierarchy.

Every error raised on purpose by the package derives from ``PathFairError``
so callers (the CLI in particular) can map them to exit codes.
"""


class PathFairError(Exception):
    """Base class."""


class GraphError(PathFairError):
    """Malformed graph or pathway specification."""


class CycleError(GraphError):
    pass


class InvalidPathSet(GraphError):
    """An edge of rho does not lie on any causal path from S to Y."""


class NotIdentified(PathFairError):
    """The pathway-specific effect has a recanting witness."""

    def __init__(self, witness):
        super().__init__(f"recanting witness: {witness}")
        self.witness = witness


class DataError(PathFairError):
    """Dataset violates its schema."""


class UnknownColumn(DataError):
    pass


class NonFinite(DataError):
    pass


class RankDeficient(PathFairError):
    pass


class NotConverged(PathFairError):
    """Fit stopped before reaching tolerance; ``model`` holds the last iterate."""

    def __init__(self, msg, model=None):
        super().__init__(msg)
        self.model = model


class UnsupportedScenario(PathFairError):
    pass


class DegenerateVariance(PathFairError):
    pass


class NegativeDiscriminant(PathFairError):
    pass


class EmptyFeasibleInterval(PathFairError):
    def __init__(self, msg, rows=None):
        super().__init__(msg)
        self.rows = rows


class BadSpec(PathFairError):
    pass
