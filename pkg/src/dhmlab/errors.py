"""Exception hierarchy shared by the package."""


class DHMError(Exception):
    """Base class for all errors raised by :mod:`dhmlab`."""


class GridError(DHMError, ValueError):
    """Invalid grid construction or mismatched field shapes."""


class InvariantError(DHMError, ValueError):
    """A field violates a required pointwise invariant (sphere, tangency, ...)."""


class UnsupportedTopology(DHMError):
    """Operation is not defined for the grid topology (or target dimension)."""


class UnderResolvedError(DHMError, ValueError):
    """A requested length scale is below the grid resolution floor."""


class SolverDivergence(DHMError, RuntimeError):
    """Explicit relaxation blew up."""


class SnapshotFormatError(DHMError, ValueError):
    """A field snapshot file could not be decoded."""
