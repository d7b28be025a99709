"""
Exception hierarchy for gsmt.

Every error carries the process exit code the CLI reports for it.
"""

from typing import List, Optional


class GsmtError(Exception):
    """Base exception for gsmt errors"""

    exit_code = 1


class ConfigError(GsmtError):
    """Invalid or inconsistent configuration"""

    exit_code = 2


class DataError(GsmtError):
    """Input data cannot be turned into a dataset"""

    exit_code = 3


class FormatError(DataError):
    """Malformed GPS CSV"""


class EmptyInputError(DataError):
    """No records to work with"""


class EmptyAfterCleanError(DataError):
    """Cleaning rules dropped every record"""


class CannotImputeError(DataError):
    """A series has no observed frame to impute from"""


class TooFewWindowsError(DataError):
    """Not enough windows for an 80/10/10 split"""


class WindowError(DataError):
    """History does not cover a full input window"""


class TrainingError(GsmtError):
    """Training diverged or could not run.

    When ``epoch`` is set the message ends with the last few per-epoch
    training losses.
    """

    exit_code = 4
    trace_tail = 5

    def __init__(self, message: str, epoch: Optional[int] = None, loss_trace: Optional[List[float]] = None):
        self.epoch = epoch
        self.loss_trace = list(loss_trace or [])
        if epoch is not None:
            shown = [f"{v:.6g}" for v in self.loss_trace[-self.trace_tail :]]
            if len(self.loss_trace) > self.trace_tail:
                shown.insert(0, "...")
            message = f"{message}; loss trace [{', '.join(shown)}]"
        super().__init__(message)


class CompatibilityError(GsmtError):
    """Checkpoint and bundle/config do not belong together"""

    exit_code = 5


class NumericError(GsmtError):
    """Non-finite value encountered"""


class DimensionError(GsmtError):
    """Shapes do not conform"""


class ContractError(GsmtError):
    """A documented precondition was violated"""


class TapeIntegrityError(GsmtError):
    """Backward pass over a tape that does not cover the loss"""


class StateError(GsmtError):
    """Operation called before the state it needs exists"""
