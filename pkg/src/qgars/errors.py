"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent configuration."""


class ShapeError(ValueError):
    """Array shape does not match what an operation expects."""


class DataFormatError(ValueError):
    """A data file is malformed (bad magic, truncated payload, ...)."""


class EvolutionError(RuntimeError):
    """The state-vector integrator failed to stay on the unit sphere."""


class TrainingError(RuntimeError):
    """A training loop diverged (NaN/inf loss); carries the epoch index."""
