"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown configuration key."""


class TrainingError(RuntimeError):
    """A training step failed (non-finite losses or gradients)."""


class MetricFailure(RuntimeError):
    """A metric protocol could not produce a score."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, corrupt, or from an unknown version."""
