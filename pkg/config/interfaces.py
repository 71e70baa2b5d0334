class DiffCapException(Exception):
    pass


class ConfigurationError(DiffCapException):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ArgumentError(DiffCapException):
    pass


class DivergenceError(DiffCapException):
    pass


class DatasetLoadError(DiffCapException):
    pass


class FeatureMagicError(DatasetLoadError):
    pass


class FeatureTruncatedError(DatasetLoadError):
    pass


class FeatureIndexError(DatasetLoadError):
    pass


class RecordFormatError(DatasetLoadError):
    pass


class CheckpointError(DiffCapException):
    pass


class EvaluationError(DiffCapException):
    pass
