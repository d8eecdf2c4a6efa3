class SaferlError(Exception):
    """Base class for every error raised by the saferl library."""


class ConfigError(SaferlError):
    pass


class SchemaError(SaferlError):
    pass


class MissingDataError(SchemaError):
    pass


class ShapeError(SaferlError):
    pass


class MappingError(SaferlError):
    pass


class DomainError(SaferlError, ValueError):
    pass


class CoverageError(SaferlError):
    pass


class RankDeficiencyError(SaferlError):
    pass


class DivergenceError(SaferlError):
    def __init__(self, message, epoch=None, iteration=None):
        super().__init__(message)
        self.epoch = epoch
        self.iteration = iteration


class NoOverlapError(SaferlError):
    pass


class SerializationError(SaferlError):
    pass


class ExperimentAborted(SaferlError):
    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)
