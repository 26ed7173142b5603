"""Exception types shared across the package.

Everything raised on purpose derives from DualstreamError so callers can
catch library failures without also swallowing programming errors.
"""


class DualstreamError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DualstreamError):
    """Operands have incompatible shapes; the message names both shapes."""


class DomainError(DualstreamError):
    """A math op was applied outside its domain (log/sqrt of non-positive)."""


class NonFiniteError(DualstreamError):
    """NaN or inf showed up where finite values are required."""


class NoSupervisionError(DualstreamError):
    """A supervised loss was asked for on a batch with no known labels."""


class ConfigError(DualstreamError):
    """Bad configuration: unknown key, unparsable value, invalid combination."""


class CheckpointError(DualstreamError):
    """Checkpoint file is malformed or does not match the current model."""


class DataFormatError(DualstreamError):
    """Dataset or embedding file is malformed; message carries the location."""


class NonDeterministicError(DualstreamError):
    """Two evaluations that must agree bitwise did not."""


class GradCheckError(DualstreamError):
    """Analytic and numeric gradients disagree beyond tolerance."""
