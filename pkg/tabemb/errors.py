from __future__ import annotations
from typing import Optional


class TabEmbError(Exception):
    """Root of every error raised by tabemb."""
    exit_code = 1


# ---- Usage / validation (exit 2) -------------------------------------------

class UsageError(TabEmbError):
    exit_code = 2


class ArgumentError(UsageError, ValueError):
    pass


class ConfigError(UsageError, ValueError):
    pass


class DatasetParseError(UsageError, ValueError):
    def __init__(self, path: str, line: Optional[int], reason: str):
        self.path, self.line, self.reason = path, line, reason
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {reason}")


class LabelValidationError(UsageError, ValueError):
    def __init__(self, table_id: str, label: str, task: str):
        self.table_id, self.label, self.task = table_id, label, task
        super().__init__(f"Table '{table_id}': {task} label '{label}' is not in the label space")


class PoolMismatchError(UsageError):
    pass


class CheckpointError(UsageError):
    pass


# ---- Runtime (exit 1) ------------------------------------------------------

class EmbeddingError(TabEmbError):
    def __init__(self, message: str, column: Optional[int] = None):
        self.detail, self.column = message, column
        super().__init__(f"column {column}: {message}" if column is not None else message)

    def at_column(self, column: int) -> "EmbeddingError":
        return EmbeddingError(self.detail, column=column)


class EmbeddingTransportError(EmbeddingError):
    def __init__(self, message: str, attempts: int, column: Optional[int] = None):
        self.attempts = attempts
        super().__init__(f"{message} (gave up after {attempts} attempts)", column)
        self.detail = message

    def at_column(self, column: int) -> "EmbeddingError":
        return EmbeddingTransportError(self.detail, self.attempts, column=column)


class StructuralError(TabEmbError):
    pass


class TrainingError(TabEmbError):
    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")


class NonFiniteGradientError(TabEmbError):
    def __init__(self, parameter: str):
        self.parameter = parameter
        super().__init__(f"Non-finite gradient for parameter '{parameter}'")
