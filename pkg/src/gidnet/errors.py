"""Exception types raised across the package."""


class GidnetError(Exception):
    """Base class for all errors raised by gidnet."""


class ShapeError(GidnetError, ValueError):
    """Tensor extents or channel counts do not satisfy an operator contract."""


class NonFiniteError(GidnetError, FloatingPointError):
    """An operator produced NaN or Inf."""


class ConfigError(GidnetError, ValueError):
    """Invalid model, training or evaluation configuration."""


class ArchiveError(GidnetError):
    """Weight archive is corrupt, of the wrong version, or does not match a config."""


class ImageError(GidnetError):
    """PNG file could not be read or has an unsupported layout."""
