"""Exception types raised across the package."""


class QosProvError(Exception):
    """Base class for all package errors."""


class InvalidAction(QosProvError):
    pass


class DimensionMismatch(QosProvError, ValueError):
    pass


class NonFiniteLoss(QosProvError, FloatingPointError):
    pass


class FormatError(QosProvError):
    """A checkpoint file is malformed, truncated or has the wrong version."""


class InvalidAcceptanceRatio(QosProvError, ValueError):
    pass


class InsufficientSamples(QosProvError, ValueError):
    pass


class ConfigError(QosProvError, ValueError):
    pass
