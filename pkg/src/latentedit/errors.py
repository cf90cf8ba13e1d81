"""Exception hierarchy.

Every error carries a ``category`` that the CLI maps onto an exit code:
``config`` -> 2, ``numerical`` -> 3, ``io`` -> 4.
"""


class LatentEditError(Exception):
    category = "numerical"


class ConfigError(LatentEditError, ValueError):
    category = "config"


class ArtifactIOError(LatentEditError, OSError):
    category = "io"


class DimensionMismatch(ConfigError):
    pass


class DegenerateData(LatentEditError, ValueError):
    pass


class NonFiniteLoss(LatentEditError, FloatingPointError):
    pass


class InfeasibleAngles(ConfigError):
    pass


class ClassifierTrainingFailed(LatentEditError):
    pass


class BiasUnreachable(LatentEditError):
    pass


class UnknownAttribute(ConfigError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ZeroGradient(LatentEditError):
    pass


class EmptySampleSet(LatentEditError):
    pass


class DegenerateCombination(LatentEditError):
    pass


class DegenerateProjection(LatentEditError):
    pass


class NoAttributePairs(ConfigError):
    pass


class PartialTrajectory(LatentEditError):
    """Editing aborted mid-way; ``trajectory`` holds the completed prefix."""

    def __init__(self, message, trajectory, cause):
        super().__init__(message)
        self.trajectory = trajectory
        self.cause = cause
