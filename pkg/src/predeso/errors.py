"""Exception hierarchy shared by all modules.

Each class carries the process exit code the command line maps it to.
"""


class PredesoError(Exception):
    exit_code = 1


class DimensionError(PredesoError, ValueError):
    exit_code = 2


class ConfigError(PredesoError, ValueError):
    exit_code = 2


class ParameterError(ConfigError):
    """A design parameter violates a stated inequality (mu > 1, alpha >= eps, ...)."""


class AssumptionError(PredesoError):
    exit_code = 3


class InfeasibleError(PredesoError):
    exit_code = 4

    def __init__(self, message, stage=None):
        if stage:
            message = f"[{stage}] {message}"
        super().__init__(message)
        self.stage = stage


class SingularEquationError(InfeasibleError):
    pass


class NumericalError(PredesoError):
    exit_code = 4


class CertificateError(InfeasibleError):
    pass


class InvariantError(PredesoError):
    """An internal identity failed; indicates a bug rather than bad input."""


class DivergenceError(PredesoError):
    exit_code = 5

    def __init__(self, message, agent=None, t=None):
        super().__init__(message)
        self.agent = agent
        self.t = t
