"""Exception types shared across the package.

The CLI maps these onto distinct process exit codes, so keep the hierarchy
flat and the meanings crisp: configuration problems, data problems, numeric
blow-ups, and broken internal contracts are different failure modes.
"""


class CtrZooError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(CtrZooError):
    """Operands have incompatible shapes or lengths."""


class DomainError(CtrZooError):
    """An input value is outside the domain an operation accepts."""


class ConfigError(CtrZooError):
    """A spec, flag, or config file is inconsistent or unusable."""


class CatalogError(ConfigError):
    """A model name is not in the catalog."""


class DataError(CtrZooError):
    """Raw or encoded data cannot be read, parsed, or validated."""


class NumericError(CtrZooError):
    """A computation produced NaN/Inf or otherwise left the float64 domain."""


class TrainingError(CtrZooError):
    """Training diverged or could not proceed; carries epoch/batch context."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class MetricError(CtrZooError):
    """A requested metric is undefined for the given inputs."""


class ContractError(CtrZooError):
    """An internal API precondition was violated by the caller."""
