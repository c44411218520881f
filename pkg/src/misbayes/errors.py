"""Exception hierarchy shared by every module."""


class MisbayesError(Exception):
    """Base class for all toolkit errors."""


class ContractError(MisbayesError, ValueError):
    """A documented precondition was violated by the caller."""


class ParameterDomainError(MisbayesError, ValueError):
    """Distribution or model parameters outside their valid domain."""


class DegeneracyError(MisbayesError, ArithmeticError):
    """A matrix or sample collapsed (singular covariance, zero variance, ...).

    ``value`` carries the offending eigenvalue or statistic when one exists and
    ``direction`` the collapsed direction.
    """

    def __init__(self, message, value=None, direction=None):
        super().__init__(message)
        self.value = value
        self.direction = direction


class ConvergenceError(MisbayesError, RuntimeError):
    """An iterative solver failed to converge. ``last`` holds the last iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class SeparationError(ConvergenceError):
    """Coefficients diverged during a GLM fit (complete or quasi separation)."""


class DesignError(MisbayesError, ValueError):
    """Design matrix is rank deficient."""


class InitializationError(MisbayesError, ValueError):
    """An MCMC chain could not start from the supplied point."""


class DataError(MisbayesError, ValueError):
    """Input data failed to load or violated a data invariant.

    ``code`` is a short machine-readable reason such as ``missing-file`` or
    ``empty-file``.
    """

    def __init__(self, message, row=None, column=None, code="invalid-data"):
        super().__init__(message)
        self.row = row
        self.column = column
        self.code = code


class ConfigError(MisbayesError, ValueError):
    """Run configuration failed validation."""
