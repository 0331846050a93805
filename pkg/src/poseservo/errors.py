"""Exception types shared across the package."""


class PoseServoError(Exception):
    """Base class for all package-specific errors."""


class AngleNearPi(PoseServoError):
    """SE(3)/SO(3) log requested for a rotation at or near pi radians."""


class DimensionMismatch(PoseServoError):
    """Vector or matrix dimensions inconsistent with the kinematic chain."""


class CostSingularity(PoseServoError):
    """Tracking cost evaluated at a rotation where the log map is ill-conditioned."""


class BackwardPassFailure(PoseServoError):
    """Quu not positive definite even at maximum regularization."""


class NonFiniteCost(PoseServoError):
    """Cost or dynamics produced NaN/inf during the solve."""


class NotInitialized(PoseServoError):
    """Pipeline queried before the first localization + catch-up completed."""


class BufferOverflow(PoseServoError):
    """Frame buffer exceeded capacity; oldest frame dropped (logged, non-fatal)."""


class EmptySequence(PoseServoError):
    """Metric requested on an empty estimate/ground-truth sequence."""


class SolverDiverged(PoseServoError):
    """Closed-loop run aborted because the OCP solver failed."""


class ParseError(PoseServoError):
    """Config file could not be parsed."""

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field


class ValidationError(PoseServoError):
    """Config parsed but violates a type invariant."""

    def __init__(self, field, constraint):
        super().__init__(f"{field}: {constraint}")
        self.field = field
        self.constraint = constraint
