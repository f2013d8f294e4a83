"""Dual-task single-image dehazing network implemented on plain numpy."""
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DomainError,
    FormatError,
    LdtNetError,
    NumericError,
    ShapeError,
)
from .model import (
    LdtNetParams,
    LossWeights,
    backward,
    dehaze,
    forward,
    init_params,
    load_params,
    loss,
    save_params,
)

__version__ = "0.1.0"
