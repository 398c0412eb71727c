"""Exception types shared across the package."""


class ArraybootError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(ArraybootError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateSampleError(DomainError):
    """The sample is too small for the requested operation."""


class ModelSpecError(ArraybootError, ValueError):
    """A user-supplied model (kernel function, sampler) is malformed."""


class EvaluationError(ArraybootError, ValueError):
    """A statistic evaluated to a non-finite value on some cell."""


class PlanError(ArraybootError, ValueError):
    """A resampling plan is invalid or does not match the operation."""


class RankError(ArraybootError, ValueError):
    """A linear system arising in estimation is singular."""


class CollinearityError(RankError):
    """Design matrix is rank deficient.

    ``columns`` names the offending columns when they could be identified.
    """

    def __init__(self, message: str, columns: list[str] | None = None):
        super().__init__(message)
        self.columns = columns or []


class NonConvergenceError(ArraybootError, RuntimeError):
    """An iterative fit hit its iteration cap.

    Carries the last iterate and the final residual norm for diagnostics.
    """

    def __init__(self, message: str, last_iterate=None, norm: float | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.norm = norm


class InferenceError(ArraybootError, RuntimeError):
    """Too many resampling replicates failed for the report to be usable."""


class DataFormatError(ArraybootError, ValueError):
    """An input file does not match the documented format.

    ``row`` is the 1-based data row (header excluded) when applicable.
    """

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class ConfigError(ArraybootError, ValueError):
    """A study configuration file is malformed."""
