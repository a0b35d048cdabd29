"""Exception types shared across the pipeline."""


class NilmError(Exception):
    """Base class for pipeline errors."""


class DimensionError(NilmError, ValueError):
    pass


class DataError(NilmError, ValueError):
    """Malformed or unusable input data."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ExtractionError(NilmError):
    pass


class TrainingError(NilmError):
    pass


class GenerationError(NilmError):
    pass


class ConfigError(NilmError):
    pass


class DependencyError(NilmError):
    """An upstream artifact required by a subcommand is missing."""

    def __init__(self, artifact, producer):
        self.artifact = artifact
        self.producer = producer
        super().__init__(f"missing {artifact}; run `{producer}` first")
