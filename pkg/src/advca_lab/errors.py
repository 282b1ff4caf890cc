"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment configuration or command-line usage."""


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


class TrainingDivergedError(RuntimeError):
    """A loss became non-finite during optimization."""
