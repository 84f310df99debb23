from __future__ import annotations

from typing import Iterable, Optional


class S2CError(Exception):
    """Base error. `exit_code` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(S2CError):
    exit_code = 2

    def __init__(self, message: str, *, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class DataError(S2CError):
    exit_code = 3


class DataTruncationError(DataError):
    pass


class LabelError(DataError):
    pass


class PreservationError(S2CError):
    exit_code = 4

    def __init__(self, message: str, *, max_abs_diff: float):
        super().__init__(message)
        self.max_abs_diff = max_abs_diff


class NumericError(S2CError):
    exit_code = 5

    def __init__(self, message: str, *, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class CheckpointError(S2CError):
    exit_code = 6


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    def __init__(self, message: str, *, tensor: str):
        super().__init__(message)
        self.tensor = tensor


class CheckpointIndexError(CheckpointError):
    pass


class ShapeError(S2CError, ValueError):
    pass


class GraphError(ShapeError):
    def __init__(self, message: str, *, junction: Optional[int] = None):
        super().__init__(message)
        self.junction = junction


class ConsistencyError(S2CError):
    pass


class GrowthError(S2CError):
    pass


class ReportError(S2CError):
    def __init__(self, message: str, *, valid: Iterable[str] = ()):
        self.valid = sorted(valid)
        if self.valid:
            message = f"{message} (valid layers: {', '.join(self.valid)})"
        super().__init__(message)


class DemoTargetError(S2CError):
    """A demo run finished but missed the result it exists to show."""

    exit_code = 7
