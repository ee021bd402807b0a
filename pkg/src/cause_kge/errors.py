"""Exception types raised across the package."""


class CauseError(Exception):
    """Base class for all package errors."""


class ConfigError(CauseError, ValueError):
    """Invalid hyperparameters, dimensions or config files."""


class DataError(CauseError):
    """Problems with dataset files or triple sets."""


class ParseError(DataError, ValueError):
    def __init__(self, path, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class VocabularyError(DataError, KeyError):
    def __init__(self, token: str, kind: str = "entity"):
        self.token = token
        self.kind = kind
        super().__init__(f"unknown {kind} {token!r}")

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return self.args[0]


class SamplingError(DataError, ValueError):
    pass


class CorruptionError(DataError, RuntimeError):
    pass


class GenerationError(DataError, ValueError):
    pass


class ShapeError(CauseError, ValueError):
    """Vectors or matrices with incompatible dimensions."""


class CheckpointError(CauseError, IOError):
    """Checkpoint directory is missing, truncated, corrupt or from another format version."""


class TrainingDivergence(CauseError, FloatingPointError):
    def __init__(self, term: str, epoch: int, value: float):
        self.term = term
        self.epoch = epoch
        self.value = value
        super().__init__(f"non-finite loss term {term}={value} at epoch {epoch}")
