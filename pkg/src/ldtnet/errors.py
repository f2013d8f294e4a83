"""Exception hierarchy shared by the library and the command line.

Each error carries a short machine-readable ``code`` and the process exit
status the CLI maps it to.
"""


class LdtNetError(Exception):
    code = "E_GENERIC"
    exit_status = 1


class ConfigError(LdtNetError, ValueError):
    code = "E_CONFIG"
    exit_status = 2


class DataError(LdtNetError):
    code = "E_DATA"
    exit_status = 3


class NumericError(LdtNetError, ArithmeticError):
    code = "E_NUMERIC"
    exit_status = 4


class ShapeError(LdtNetError, ValueError):
    """Operand extents are incompatible."""

    code = "E_SHAPE"
    exit_status = 3

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class DomainError(LdtNetError, ValueError):
    """A value lies outside the domain an operation accepts."""

    code = "E_DOMAIN"
    exit_status = 3


class DegenerateBatchError(NumericError):
    code = "E_DEGENERATE_BATCH"


class ContractError(LdtNetError, RuntimeError):
    """An API was called in a state its contract forbids (e.g. backward on an eval-mode cache)."""

    code = "E_CONTRACT"
    exit_status = 4


class FormatError(DataError):
    """A weight/checkpoint/image file is malformed."""

    code = "E_FORMAT"


class UnsupportedFormatError(FormatError):
    code = "E_UNSUPPORTED_FORMAT"


class CorruptStreamError(FormatError):
    code = "E_CORRUPT"


class ChannelCountError(FormatError):
    code = "E_CHANNELS"
