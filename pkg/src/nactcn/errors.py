"""Exception hierarchy shared by every module."""


class NacTcnError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(NacTcnError, ValueError):
    """Invalid layer, model, task or experiment configuration."""


class DimensionError(NacTcnError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(NacTcnError, ValueError):
    """A precondition of an operation was violated by the caller."""


class NumericError(NacTcnError, ArithmeticError):
    """A computation produced a non-finite value."""


class DivergenceError(NumericError):
    """Training loss became non-finite."""


class UndefinedMetricError(NacTcnError, ValueError):
    """The metric is undefined for the given inputs (e.g. a single class)."""


class ParseError(NacTcnError, ValueError):
    """A dataset or config file is malformed."""


class LeakageError(NacTcnError, ValueError):
    """The same sequence id appears in more than one split."""
