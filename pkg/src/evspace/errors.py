"""Exception hierarchy. Each family maps onto one CLI exit code."""

from __future__ import annotations


class EvspaceError(Exception):
    exit_code = 1


class ConfigError(EvspaceError):
    exit_code = 2


class DataError(EvspaceError):
    exit_code = 3


class RecordError(DataError):
    """One or more malformed input records; ``errors`` holds (line, message) pairs."""

    def __init__(self, path, errors):
        self.path = str(path)
        self.errors = list(errors)
        shown = "; ".join(f"line {ln}: {msg}" for ln, msg in self.errors[:5])
        more = f" (+{len(self.errors) - 5} more)" if len(self.errors) > 5 else ""
        super().__init__(f"{self.path}: {shown}{more}")


class NumericalError(EvspaceError):
    exit_code = 4


class SeparationError(NumericalError):
    def __init__(self, predictor, message=None):
        self.predictor = predictor
        super().__init__(message or f"perfect separation on predictor {predictor!r}")


class BoundaryError(NumericalError):
    pass


class SingularMatrixError(NumericalError):
    pass


class StageError(EvspaceError):
    """Wraps a failure inside a pipeline stage, keeping the original exit code."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"stage {stage!r} failed: {cause}")
