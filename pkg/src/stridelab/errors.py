"""Exception hierarchy shared across the package."""


class StrideLabError(Exception):
    """Base class for all package errors."""


class ParameterError(StrideLabError):
    """A parameter is outside its documented range."""


class DataError(StrideLabError):
    """Input data violates a documented contract (shapes, ranges, counts)."""


class SchemaError(StrideLabError):
    """A file or message does not match its schema.

    ``field_path`` names the offending location, e.g. ``frames[3].root_pos``.
    """

    def __init__(self, message, field_path=None):
        super().__init__(message if field_path is None else f"{field_path}: {message}")
        self.field_path = field_path


class VersionError(StrideLabError):
    """File version or config hash does not match what the reader expects."""


class InvalidRotationError(StrideLabError):
    """A rotation input is degenerate (e.g. near-zero 6D first column)."""


class SimulationFault(StrideLabError):
    """Non-finite state or action fed to the simulator; names the field."""

    def __init__(self, field, message="non-finite value"):
        super().__init__(f"{field}: {message}")
        self.field = field


class TrainingFault(StrideLabError):
    """Training produced a non-finite loss or parameter."""
