"""Shared exception types."""


class ConfigurationError(ValueError):
    """Raised when a configuration value or structural setup is invalid."""


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""
