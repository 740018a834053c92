"""Exception types shared across the package."""


class DrbnError(Exception):
    """Base class for all package errors."""


class ConfigError(DrbnError):
    """Invalid or inconsistent configuration (missing pieces, bad options)."""


class ShapeError(DrbnError):
    """Dimension mismatch between data, states, and model parameters."""


class UnsupportedOperationError(DrbnError):
    """Operation not defined for this model kind."""


class EnumerationCapError(DrbnError):
    """Exact enumeration requested beyond the configured latent-count cap."""


class TrainingError(DrbnError):
    """Training diverged (non-finite objective); message names the epoch."""


class NumericalError(DrbnError):
    """Non-finite value produced inside an iterative numerical procedure."""


class StaleCacheError(DrbnError):
    """Incremental activation cache disagrees with a from-scratch recompute."""


class ParseError(DrbnError):
    """Malformed input file; message carries the byte offset where known."""


class PersistenceError(DrbnError):
    """Model/config file cannot be read back (bad version, corrupt payload)."""
