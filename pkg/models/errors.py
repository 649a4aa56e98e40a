"""
Lab Exceptions
--------------
Exception hierarchy shared by every package of the lab.
"""


class LabError(Exception):
    """Root of all lab errors"""


class ShapeMismatchError(LabError, ValueError):
    """Table dimensions disagree with the MDP or policy they are used with"""


class InvalidIndexError(LabError, ValueError):
    """A state, action or time index is out of range"""


class InvalidParameterError(LabError, ValueError):
    """A parameter violates an operation's precondition"""


class EmptyImprovableSetError(InvalidParameterError):
    """The improvable set has zero on-policy coverage"""


class SamplerExhaustedError(LabError, RuntimeError):
    """The credit sampler ran out of trials before accepting a draw"""


class InfeasibleCoverageError(LabError, RuntimeError):
    """A coverage-controlled MDP could not be generated within the retry budget"""


class ConfigValidationError(LabError, ValueError):
    """An experiment configuration failed validation"""


class CorruptArtifactError(LabError):
    """An artifact directory is missing files or its files fail their checksums"""


class ReplicateError(LabError):
    """A replicate shard failed; carries the experiment and replicate range"""

    def __init__(self, experiment: str, first: int, last: int, cause: Exception):
        self.experiment = experiment
        self.first = first
        self.last = last
        self.cause = cause
        super().__init__(
            f"{experiment}: replicates {first}..{last} failed: {type(cause).__name__}: {cause}"
        )
