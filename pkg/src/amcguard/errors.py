"""Exception hierarchy shared by all amcguard modules."""


class AmcGuardError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(AmcGuardError):
    """A caller violated an operation's precondition."""


class ShapeError(ContractError):
    """Tensor arguments have inconsistent shapes."""


class NumericalError(AmcGuardError):
    """A computation produced NaN/Inf or otherwise diverged."""


class ConfigError(AmcGuardError):
    """A run configuration is malformed or not representable."""


class DataFormatError(AmcGuardError):
    """Base class for binary artifact parsing failures."""


class BadMagicError(DataFormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(DataFormatError):
    """File format version is not supported by this build."""


class TruncatedFileError(DataFormatError):
    """File ended before the declared payload was complete."""


class ChecksumError(DataFormatError):
    """Trailing CRC32 does not match the file contents."""


class ProvenanceError(AmcGuardError):
    """Artifacts fed to one operation were produced from different runs."""
