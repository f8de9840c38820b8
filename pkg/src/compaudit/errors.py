"""Exception types shared across the package."""


class CompauditError(Exception):
    """Base class for all package errors."""


class ShapeError(CompauditError):
    """Array dimensions do not match the operation's contract."""


class InputError(CompauditError):
    """Input values are invalid (non-finite or out of range)."""


class TrainingError(CompauditError):
    """Optimization failed, e.g. the loss became non-finite."""


class DataError(CompauditError):
    """Dataset file could not be parsed."""


class SchemaError(CompauditError):
    """Parsed data violates the declared schema."""


class SizeError(CompauditError):
    """Requested split sizes exceed the available samples."""


class DegenerateDataError(CompauditError):
    """Training data does not contain both classes."""


class OrderingError(CompauditError):
    """Model list is not in ascending compression order."""


class ConfigError(CompauditError):
    """Invalid attack or experiment configuration."""


class PlanError(ConfigError):
    """Experiment plan failed validation."""


class DependencyError(CompauditError):
    """A pipeline stage is missing an upstream checkpoint."""


class CheckpointError(CompauditError):
    """Checkpoint file is malformed or has an unsupported version."""
