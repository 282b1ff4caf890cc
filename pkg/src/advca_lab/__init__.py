"""Desk-scale laboratory for adversarial causal graph augmentation.

Trains GIN classifiers on synthetic motif-classification graphs under
controllable covariate shifts, augments them with adversarially learned
soft masks that shelter causal subgraphs, and measures the covariate
shift between graph distributions with a KDE-based estimator.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, TrainingDivergedError

__all__ = ["ConfigError", "DataError", "TrainingDivergedError", "__version__"]
