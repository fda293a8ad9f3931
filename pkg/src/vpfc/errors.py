"""Exception hierarchy shared across the package."""


class VpfcError(Exception):
    """Base class for all package errors."""


class ZeroNorm(VpfcError, ValueError):
    pass


class ShapeMismatch(VpfcError, ValueError):
    pass


class GraphInconsistent(VpfcError, RuntimeError):
    """backward() called without a matching forward()."""


class DataError(VpfcError):
    """Bad or inconsistent input data. Maps to CLI exit code 2."""


class ParseError(DataError, ValueError):
    def __init__(self, path, line, reason):
        self.path = str(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{self.path}:{line}: {reason}")


class NonMonotonicTimestamps(DataError, ValueError):
    pass


class ZeroNormQuaternion(DataError, ValueError):
    pass


class TraceTooShort(DataError, ValueError):
    pass


class InvalidWindowConfig(VpfcError, ValueError):
    pass


class TooFewUsers(DataError, ValueError):
    pass


class TooFewPoints(VpfcError, ValueError):
    pass


class EmptyDataset(DataError, ValueError):
    pass


class NonFiniteLoss(VpfcError, FloatingPointError):
    """Training produced a NaN/inf loss. Maps to CLI exit code 3."""

    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")


class ConfigError(VpfcError, ValueError):
    """Unknown key or invalid value in a run config. Maps to CLI exit code 1."""


class PredictionError(VpfcError):
    """A predictor failed on a specific window."""

    def __init__(self, video_id, user_id, start, cause):
        self.video_id, self.user_id, self.start = video_id, user_id, start
        super().__init__(f"prediction failed for video={video_id} user={user_id} window_start={start}: {cause}")
