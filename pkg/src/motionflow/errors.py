"""Error taxonomy shared by every module in this package.

Each failure class maps onto one CLI exit code (see cli.py): usage problems
exit 2, data problems exit 3, numeric problems exit 4.
"""


class MotionFlowError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MotionFlowError):
    """Operand shapes are inconsistent with the operation's contract."""


class NumericError(MotionFlowError):
    """Numeric domain violation: log of a non-positive value, division by
    zero, NaN loss, non-finite evaluation."""


class ContractError(MotionFlowError):
    """An API precondition was violated (e.g. backward on a non-scalar,
    applying an uninitialised actnorm)."""


class DegenerateDataError(MotionFlowError):
    """Input data cannot support the requested computation (zero-variance
    channel, empty clip, too-short sequence)."""


class ParseError(MotionFlowError):
    """A text file (BVH, config) could not be parsed. Carries the line number
    when known."""

    def __init__(self, msg, line=None):
        if line is not None:
            msg = "line %d: %s" % (line, msg)
        super().__init__(msg)
        self.line = line


class CheckpointError(MotionFlowError):
    """A binary artifact (checkpoint or motion container) failed to load:
    bad magic, unsupported version, CRC mismatch, missing field."""


class UndefinedResultError(MotionFlowError):
    """The requested statistic is undefined for this input (e.g. step
    duration stats with zero detected steps)."""
