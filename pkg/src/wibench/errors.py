"""Exception hierarchy shared by every wibench module."""

from __future__ import annotations


class WibenchError(Exception):
    pass


# -- journal encoding -------------------------------------------------------

class JournalFormatError(WibenchError):
    pass


class FieldCountMismatch(JournalFormatError):
    def __init__(self, column: int, expected: int, got: int):
        super().__init__(f"expected {expected} fields, got {got} (column {column})")
        self.column = column
        self.expected = expected
        self.got = got


class NumericParseError(JournalFormatError):
    def __init__(self, column: int, text: str):
        super().__init__(f"cannot parse {text!r} as a number (column {column})")
        self.column = column
        self.text = text


# -- sensors ----------------------------------------------------------------

class SensorError(WibenchError):
    """A sensor source failed. ``source`` names the suite slot when known."""

    def __init__(self, message: str, source: str | None = None):
        super().__init__(f"{source}: {message}" if source else message)
        self.source = source
        self.detail = message


class MissingToken(SensorError):
    pass


class FormatError(SensorError):
    pass


class CrcError(SensorError):
    pass


class RangeError(SensorError):
    pass


class SourceUnavailable(SensorError):
    pass


# -- control channel --------------------------------------------------------

class ControlError(WibenchError):
    pass


class BindError(ControlError):
    pass


class TriggerMismatch(ControlError):
    pass


class Busy(TriggerMismatch):
    """A trigger arrived while a measurement was already running."""


class ConnectError(ControlError):
    pass


class WriteError(ControlError):
    pass


# -- transfer ---------------------------------------------------------------

class TransferError(WibenchError):
    pass


class NoSuchFile(TransferError):
    pass


class NotSupported(TransferError):
    pass


class ProtocolError(TransferError):
    pass


class TransferAborted(TransferError):
    def __init__(self, message: str, received: int = 0):
        super().__init__(message)
        self.received = received


class SizeMismatch(TransferError):
    pass


# -- analysis ---------------------------------------------------------------

class AnalysisError(WibenchError):
    pass


class IntervalMismatch(AnalysisError):
    pass


class RunIdMismatch(AnalysisError):
    pass


class ExcessiveDrop(AnalysisError):
    pass


class ZeroVariance(AnalysisError):
    pass


class EmptyInput(AnalysisError):
    pass


class LabelMismatch(AnalysisError):
    pass


# -- agents -----------------------------------------------------------------

class RunAborted(WibenchError):
    """An agent run stopped early; ``journal`` holds every row written so far."""

    def __init__(self, reason: str, journal=None):
        super().__init__(reason)
        self.reason = reason
        self.journal = journal
