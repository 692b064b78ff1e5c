"""Exception hierarchy shared by all coughkit modules."""


class CoughkitError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidParams(CoughkitError, ValueError):
    pass


# audio_io
class WavError(CoughkitError, ValueError):
    pass


class MalformedContainer(WavError):
    pass


class UnsupportedCodec(WavError):
    pass


class TruncatedData(WavError):
    pass


# dsp
class NegativeFrequency(InvalidParams):
    pass


class InvalidRef(InvalidParams):
    pass


class FormatError(CoughkitError, ValueError):
    """A binary or text artifact does not follow its documented layout."""


# cough_detect
class EmptySignal(CoughkitError, ValueError):
    pass


class ModelSyntaxError(CoughkitError, ValueError):
    def __init__(self, message, line=None, column=None, path=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}, column {column}")
        if path:
            loc.append(f"at {path}")
        super().__init__(f"{message} ({'; '.join(loc)})" if loc else message)
        self.line = line
        self.column = column
        self.path = path


class UnknownFeature(CoughkitError, ValueError):
    pass


class CyclicTree(CoughkitError, ValueError):
    pass


class InvalidThreshold(InvalidParams):
    pass


# segmentation
class InvalidConfig(InvalidParams):
    pass


class OutOfRange(CoughkitError, IndexError):
    pass


# augment
class InvalidAlpha(InvalidParams):
    pass


class ShapeMismatch(CoughkitError, ValueError):
    pass


class SilentInput(CoughkitError, ValueError):
    pass


class RateMismatch(CoughkitError, ValueError):
    pass


# train_eval
class EmptyInput(CoughkitError, ValueError):
    pass


class DimensionMismatch(CoughkitError, ValueError):
    pass


class DuplicateId(CoughkitError, ValueError):
    pass


class DegenerateDataset(CoughkitError, ValueError):
    pass


class MissingClass(CoughkitError, ValueError):
    pass


# pipeline
class ConfigError(CoughkitError, ValueError):
    pass


class DataError(CoughkitError, ValueError):
    pass


class StageError(CoughkitError, RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
