"""Exception types raised across the package."""


class TopoprepError(Exception):
    """Base class for every error raised by topoprep."""


class InvalidDegreeError(TopoprepError, ValueError):
    pass


class InvalidPlanError(TopoprepError, ValueError):
    pass


class InvalidPartitionError(TopoprepError, ValueError):
    pass


class InvalidNodeError(TopoprepError, IndexError):
    pass


class ShapeError(TopoprepError, ValueError):
    pass


class NumericError(TopoprepError, ValueError):
    pass


class AlreadyCompleteError(TopoprepError, RuntimeError):
    pass


class IncompleteMatrixError(TopoprepError, ValueError):
    pass


class InvalidKError(TopoprepError, ValueError):
    pass


class CannotBuildError(TopoprepError, ValueError):
    pass


class UnderfilledPartitionError(TopoprepError, RuntimeError):
    pass


class ConfigurationError(TopoprepError, ValueError):
    pass


class InvalidInputError(TopoprepError, ValueError):
    pass


class StagedInputError(TopoprepError, FileNotFoundError):
    pass


class ValidationError(TopoprepError, ValueError):
    """Config validation failure; ``fields`` lists every offending key."""

    def __init__(self, fields: list[str], message: str | None = None):
        self.fields = list(fields)
        super().__init__(message or "invalid config fields: " + ", ".join(self.fields))
