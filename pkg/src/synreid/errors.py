"""Exception classes shared across the package.

The CLI prints ``<ClassName>: <message>`` on failure, so each class name doubles
as the machine-parsable error class.
"""


class SynReIDError(Exception):
    pass


class ConfigError(SynReIDError, ValueError):
    pass


class SchemaError(SynReIDError, ValueError):
    pass


class ShapeError(SynReIDError, ValueError):
    pass


class DegeneracyError(SynReIDError, ValueError):
    pass


class StateError(SynReIDError, RuntimeError):
    pass


class TrainingError(SynReIDError, RuntimeError):
    """Raised when a loss term becomes non-finite."""

    def __init__(self, term, step, value=float("nan")):
        self.term = term
        self.step = step
        super().__init__(f"loss term '{term}' is {value} at step {step}")
