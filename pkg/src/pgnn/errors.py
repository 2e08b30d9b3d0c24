"""Exception and warning taxonomy shared by all modules."""


class ShapeError(ValueError):
    """Operand shapes are incompatible. Message names both shapes."""


class DegenerateInputError(ValueError):
    """Input is valid in shape but degenerate (rank-deficient, constant, ...)."""


class DegradedRankError(DegenerateInputError):
    """Requested subspace dimension exceeds the achievable rank."""

    def __init__(self, message: str, achievable_rank: int):
        super().__init__(message)
        self.achievable_rank = achievable_rank


class NumericalFailureError(RuntimeError):
    """A numerical routine failed to converge or produced non-finite values."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for this input (e.g. zero-variance targets)."""


class NotApplicableError(ValueError):
    """Operation does not apply to this object (e.g. pathway stats on a plain MLP)."""


class NonContractiveError(ValueError):
    """Fixed-point verification was called on a system whose certificate is not contractive."""


class ConfigError(ValueError):
    """Experiment configuration is malformed. Message carries the offending key path."""


class IdxFormatError(ValueError):
    """IDX file is malformed. Message names the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConvergenceWarning(UserWarning):
    """An iterative routine hit its iteration cap; the result is a best estimate."""


class SubspaceAmbiguityWarning(UserWarning):
    """Tied singular values make the returned subspace ambiguous at the cut."""
