"""Video person re-identification with synthetic-to-real domain adaptation."""

from .errors import (ConfigError, DegeneracyError, SchemaError, ShapeError, StateError, SynReIDError,
                     TrainingError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "DegeneracyError", "SchemaError", "ShapeError", "StateError", "SynReIDError",
           "TrainingError", "__version__"]
