"""Exception hierarchy. The CLI maps these to exit codes."""


class TrafficastError(Exception):
    """Base class for all package errors."""


class ValidationError(TrafficastError, ValueError):
    """Input data or configuration violates a documented contract."""


class InsufficientHistoryError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class LeakageError(TrafficastError):
    """A feature window reaches past the prediction origin."""


class TrainingDivergedError(TrafficastError, RuntimeError):
    pass


class ConvergenceWarning(UserWarning):
    pass
