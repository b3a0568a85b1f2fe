"""Exception types shared across the toolkit."""


class MtwkitError(Exception):
    """Base class for all toolkit errors."""


class OutOfValidityDomain(MtwkitError):
    """A point pair (x, y) lies outside the cost's validity domain."""


class UnsupportedOrder(MtwkitError):
    """A derivative order above 4 was requested."""


class A2Violation(MtwkitError):
    """The mixed Hessian of the cost is numerically singular at this pair."""

    def __init__(self, message, x=None, y=None, det=None):
        super().__init__(message)
        self.x = x
        self.y = y
        self.det = det


class NoConvergence(MtwkitError):
    """An iterative solve failed to reach its residual tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class RootBracketFailure(MtwkitError):
    """A 1-D root solve could not bracket a sign change inside its probe box."""


class MissingDefiningFunction(MtwkitError):
    """The operation requires a domain with an analytic defining function."""


class EmptyMeasure(MtwkitError):
    """A discrete measure has no points, or a point carries no mass."""


class MassImbalance(MtwkitError):
    """Source and target total masses differ and normalization is disabled."""


class ScaleExceeded(MtwkitError):
    """Problem size exceeds the configured desk-scale cap."""


class SolverStalled(MtwkitError):
    """The exact solver hit its pivot safety cap without terminating."""


class NotASupport(MtwkitError):
    """The proposed function fails to dominate the potential everywhere."""


class BoundaryNode(MtwkitError):
    """Superdifferential requested at a node without a full interior stencil."""


class NoQualifiedNodes(MtwkitError):
    """No grid node qualifies for the Monge-Ampere residual check."""


class MismatchedScenarios(MtwkitError):
    """The two solved inputs do not come from the same scenario."""


class MissingStage(MtwkitError):
    """The run report lacks the stage required for this output."""


class ConfigError(MtwkitError):
    """A scenario configuration failed to parse or validate."""

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
