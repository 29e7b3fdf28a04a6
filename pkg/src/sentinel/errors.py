"""Exception hierarchy.

Every error the library raises derives from :class:`SentinelError`. The
CLI maps ``InputError`` subclasses to exit code 1 and everything else to 2.
"""


class SentinelError(Exception):
    """Base class for all library errors."""


class InputError(SentinelError, ValueError):
    """Bad input data or arguments (user-correctable)."""


# identification
class SeriesTooShort(InputError):
    pass


class NonFinite(InputError):
    pass


class RankDeficient(InputError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class InsufficientHistory(InputError):
    pass


class OrderZero(InputError):
    pass


# tracking
class InvalidNoise(InputError):
    pass


class BadConfidence(InputError):
    pass


class SingularInnovation(SentinelError):
    pass


class OutOfOrder(InputError):
    pass


# classification
class WindowTooSmall(InputError):
    pass


class ZeroBaseline(InputError):
    pass


# synthesis
class UnstableModel(InputError):
    pass


class OverlappingFault(InputError):
    pass


class SpecOutOfRange(InputError):
    pass


class Unsatisfiable(InputError):
    pass


# pipeline
class UnknownSensor(InputError):
    pass


class InsufficientData(InputError):
    pass


# io
class MalformedRow(InputError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class NonMonotoneT(InputError):
    def __init__(self, message, line=None, sensor_id=None):
        super().__init__(message)
        self.line = line
        self.sensor_id = sensor_id


class MissingHeader(InputError):
    pass


class VersionMismatch(InputError):
    pass


class Malformed(InputError):
    pass


class LengthMismatch(InputError):
    pass


class ConfigError(InputError):
    pass
