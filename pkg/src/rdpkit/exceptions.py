"""Exception hierarchy. The CLI maps these onto process exit codes."""


class RDPError(Exception):
    """Base class for all errors raised by rdpkit."""

    exit_code = 1


class ConfigError(RDPError, ValueError):
    """Invalid arguments, shapes or configuration values."""

    exit_code = 2


class GuardLimitError(RDPError):
    """A computation would exceed a configured size guard."""

    exit_code = 3


class NumericalError(RDPError, ArithmeticError):
    """A numerical failure (non-finite result, divergence, bad domain)."""

    exit_code = 4


class DegenerateTailError(ConfigError):
    """The tail outside the top-K set carries no proposal mass."""


class SelectionMismatchError(ConfigError):
    """A second-order pass was handed a selection other than the one its alphas came from."""


class TapeError(RDPError, RuntimeError):
    """Misuse of the differentiation tape."""

    exit_code = 4
