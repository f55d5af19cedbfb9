"""Error classes shared across the package."""


class DmcondError(Exception):
    """Base class for all package errors."""


class ConfigError(DmcondError):
    """Invalid configuration value or unknown option."""


class LoadError(DmcondError):
    """Dataset source files missing or unreadable."""


class FormatError(DmcondError):
    """Malformed or inconsistent condensed-set container file."""


class ShapeError(DmcondError):
    """Tensor shape does not match the network input contract."""


class SamplerError(DmcondError):
    """Network sampler cannot produce a draw (e.g. empty checkpoint pool)."""


class SelectionError(DmcondError):
    """Coreset selection request exceeds the available samples."""


class ContractError(DmcondError):
    """Caller violated an operation precondition."""


class TrainingError(DmcondError):
    """Training diverged (non-finite loss)."""


class CorrelationError(DmcondError):
    """Too few items to compute a rank correlation."""
