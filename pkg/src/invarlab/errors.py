"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class InvarlabError(Exception):
    pass


class ConfigError(InvarlabError, ValueError):
    pass


class DataError(InvarlabError, ValueError):
    pass


class NumericalError(InvarlabError, ArithmeticError):
    pass


class ShapeError(InvarlabError, ValueError):
    """Array dimensions do not chain or do not match a stored trace."""


class InfeasibleRegimeError(NumericalError):
    """A bound quantity is undefined for the requested parameters (e.g. m_k <= 0)."""


# IDX parsing
class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass
