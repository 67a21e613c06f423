# errors.py


class QTrajError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidArgumentError(QTrajError, ValueError):
    pass


class ConfigError(QTrajError, ValueError):
    """
    Raised for config validation failures.

    Args:
        field_path (str): Dotted path of the offending field, e.g. 'atom.gamma'.
        message (str): What is wrong with it.
    """

    def __init__(self, field_path, message):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class UnsupportedConfigurationError(QTrajError, ValueError):
    pass


class PreconditionViolatedError(QTrajError, ValueError):
    pass


class DegenerateSpectrumError(QTrajError, ValueError):
    pass


class SingularSystemError(QTrajError, ArithmeticError):
    pass


class SingularPhaseError(QTrajError, ArithmeticError):
    pass


class IntegrationDivergedError(QTrajError, ArithmeticError):
    pass


class NumericalPositivityError(QTrajError, ArithmeticError):
    pass


class UndefinedQError(QTrajError, ArithmeticError):
    pass
