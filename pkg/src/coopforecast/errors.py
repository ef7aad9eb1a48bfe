"""Exception hierarchy shared by every module.

Errors fall into three families that the CLI maps to exit codes:
input problems (2), violated invariants (3) and numerical failures (4).
"""


class CoopForecastError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InputError(CoopForecastError):
    exit_code = 2


class InvariantError(CoopForecastError):
    exit_code = 3


class NumericError(CoopForecastError):
    exit_code = 4


# geometry
class InsufficientMatches(InputError):
    pass


class DegenerateConfiguration(NumericError):
    pass


class NoConsensus(NumericError):
    pass


class CheiralityAmbiguous(NumericError):
    pass


class NonPositiveDistance(InputError):
    pass


class FrameMismatch(InputError):
    pass


class GimbalLock(NumericError):
    pass


# scene
class EmptyScene(InputError):
    pass


# forecaster
class ShapeMismatch(InputError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, batch_index, epoch=None, value=float("nan")):
        self.batch_index = batch_index
        self.epoch = epoch
        self.value = value
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, batch {batch_index}"
        )


class DegenerateN(InputError):
    pass


# metrics
class LengthMismatch(InputError):
    pass


class SingularCovariance(NumericError):
    pass


# data
class ParseError(InputError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class EmptyFile(InputError):
    pass


# scenarios
class StageError(CoopForecastError):
    """Wraps a failure raised inside one pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 4)
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
