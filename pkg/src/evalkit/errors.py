"""Exception hierarchy.

Every error carries a stable machine-readable ``code`` (the class name) that the
CLI and the HTTP API surface verbatim.
"""

from __future__ import annotations


class EvalkitError(Exception):
    """Base class for all library errors."""

    #: user errors map to CLI exit code 1, internal ones to 2
    user_error = True

    @property
    def code(self) -> str:
        return type(self).__name__


# schema / accumulation
class SchemaMismatch(EvalkitError):
    pass


class RaggedBatch(EvalkitError):
    pass


class EmptyInput(EvalkitError):
    pass


class LengthMismatch(EvalkitError):
    pass


class IncompatibleSchemas(EvalkitError):
    pass


class SpillIOFailure(EvalkitError):
    user_error = False


class ChecksumMismatch(EvalkitError):
    user_error = False


# module math
class InvalidParameter(EvalkitError):
    pass


class UnknownAveraging(InvalidParameter):
    pass


class EmptyReferenceSet(EvalkitError):
    pass


class PositiveLogProb(EvalkitError):
    pass


class DegenerateResult(EvalkitError):
    user_error = False


# stats
class IterationOutOfRange(EvalkitError):
    pass


class DegenerateMetric(EvalkitError):
    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


# registry
class UnknownModule(EvalkitError):
    pass


class VersionNotFound(EvalkitError):
    pass


class InvalidManifest(EvalkitError):
    pass


class CardValidationFailure(EvalkitError):
    pass


class TargetExists(EvalkitError):
    pass


class InvalidName(EvalkitError):
    pass


class ExternalModuleFailure(EvalkitError):
    user_error = False


# evaluator
class DatasetParseError(EvalkitError):
    pass


class MetricSchemaMismatch(EvalkitError):
    pass


class UnknownTask(EvalkitError):
    pass


class ProviderError(EvalkitError):
    """The provider answered a request with an error record."""

    user_error = False


class ProviderCrash(EvalkitError):
    user_error = False

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message if not stderr else f"{message}\n--- provider stderr ---\n{stderr}")
        self.stderr = stderr


class ProviderProtocolViolation(EvalkitError):
    user_error = False


class ResponseTimeout(EvalkitError):
    user_error = False


# service
class InvalidSpec(EvalkitError):
    def __init__(self, message: str, fields: dict[str, str] | None = None):
        super().__init__(message)
        self.fields = fields or {}


class DatasetUnreadable(EvalkitError):
    pass


class NotFound(EvalkitError):
    pass


class AlreadyDecided(EvalkitError):
    pass


class Unauthorized(EvalkitError):
    pass


class UnknownMetricDirection(EvalkitError):
    pass


class InvalidValue(EvalkitError):
    pass


class UnknownMetric(EvalkitError):
    pass
