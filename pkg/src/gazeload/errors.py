"""Exception types raised across the pipeline.

Every error derives from :class:`GazeLoadError`. Errors caused by bad input
values also derive from :class:`ValueError` so generic callers (sklearn
utilities, argument parsers) handle them the usual way.
"""


class GazeLoadError(Exception):
    pass


class DataError(GazeLoadError, ValueError):
    """Input data violates a documented precondition."""


# ingestion
class MissingColumn(DataError):
    pass


class NonMonotonicTimestamp(DataError):
    def __init__(self, row, previous, current):
        self.row = row
        super().__init__(
            f"timestamp at row {row} ({current}) is not greater than previous ({previous})"
        )


class BadManifest(DataError):
    pass


class EmptyAfterTrim(DataError):
    pass


# signal processing
class EmptySignal(DataError):
    pass


class CutoffAboveNyquist(DataError):
    pass


class NaNInput(DataError):
    pass


# fixation detection
class TooFewSamples(DataError):
    pass


class LengthMismatch(DataError):
    pass


# dataset
class OutOfRange(DataError):
    pass


class SessionTooShort(DataError):
    pass


class DegenerateSplit(DataError):
    pass


# models
class DimensionMismatch(DataError):
    pass


class SingleClassData(DataError):
    pass


class EmptySet(DataError):
    pass


class FoldTooSmall(DataError):
    pass


class EmptyTestSet(DataError):
    pass


class BadModelFile(GazeLoadError):
    pass


# streaming
class OutOfOrderSample(DataError):
    pass
