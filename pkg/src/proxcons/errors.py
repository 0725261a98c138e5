"""Exception types shared across the package."""


class ProxconsError(Exception):
    """Base class for all package errors."""


class InvalidEdge(ProxconsError):
    """Edge list contains a self-loop, duplicate, or out-of-range index."""


class DisconnectedGraph(ProxconsError):
    """The undirected graph is not connected."""


class GenerationFailed(ProxconsError):
    """Random generation exhausted its retry budget."""


class DimensionMismatch(ProxconsError):
    """An array argument has the wrong shape."""


class UnsupportedProx(ProxconsError):
    """No closed-form prox is registered for the requested family."""


class NotConverged(ProxconsError):
    """An iterative reference solve stopped before reaching tolerance."""


class ScheduleViolation(ProxconsError):
    """A stepsize schedule broke its monotonicity contract."""


class RequiresStaticGraph(ProxconsError):
    """Kernel only supports static graphs but was given an activation draw."""


class AsymmetricWeights(ProxconsError):
    """Weight matrix is not symmetric."""


class NotRowStochastic(ProxconsError):
    """Weight matrix rows do not sum to one (or have negative entries)."""


class NotDoublyStochastic(ProxconsError):
    """Weight matrix columns do not sum to one."""


class NonpositiveRho(ProxconsError):
    """A penalty parameter is zero or negative."""


class ZeroOptimum(ProxconsError):
    """Relative accuracy is undefined because the optimal value is zero."""


class NonpositiveMetric(ProxconsError):
    """Log-log slope requested on a metric that is not strictly positive."""


class NumericalFailure(ProxconsError):
    """A kernel produced non-finite values or failed mid-run."""


class ConfigError(ProxconsError):
    """Experiment configuration failed validation."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class UnknownPreset(ProxconsError):
    """Requested scenario preset does not exist."""


class GridMismatch(ProxconsError):
    """Trace files do not share a common iteration grid."""
