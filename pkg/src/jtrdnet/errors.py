"""Exception types raised across the package."""


class JtrdError(Exception):
    """Base class for all package errors."""


class NonHermitian(JtrdError):
    pass


class NonFinite(JtrdError):
    pass


class Singular(JtrdError):
    pass


class NotPsd(JtrdError):
    pass


class DimensionMismatch(JtrdError):
    pass


class DegenerateCodeword(JtrdError):
    pass


class MissingCache(JtrdError):
    pass


class AlphabetTooLarge(JtrdError):
    pass


class SearchTooLarge(JtrdError):
    pass


class SingularNoiseCovariance(JtrdError):
    pass


class SingularPilot(JtrdError):
    pass


class NonFiniteLoss(JtrdError):
    pass


class VersionMismatch(JtrdError):
    pass


class CorruptFile(JtrdError):
    pass


class ConfigError(JtrdError):
    pass
