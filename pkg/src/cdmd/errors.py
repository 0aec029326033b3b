"""Exception types raised across the package."""


class CDMDError(Exception):
    """Base class for all package errors."""


class DomainError(CDMDError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericalError(CDMDError, ArithmeticError):
    """A computation produced a result that violates a numerical contract."""


class SingularKernelError(NumericalError):
    """A forward kernel has a zero entry where a ratio denominator is needed."""


class IllConditionedError(NumericalError):
    def __init__(self, cond, limit):
        super().__init__(f"condition estimate {cond:.3e} exceeds {limit:.1e}")
        self.cond = cond
        self.limit = limit


class DegenerateDistributionError(NumericalError):
    """No positive mass left after clamping."""


class DistillationAborted(NumericalError):
    def __init__(self, message, skipped, total):
        super().__init__(message)
        self.skipped = skipped
        self.total = total


class ConfigError(CDMDError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
