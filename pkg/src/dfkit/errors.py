"""Exception hierarchy. Every error raised by the package derives from DfkitError."""


class DfkitError(ValueError):
    pass


# media ingest
class MissingMagic(DfkitError):
    pass


class MissingRequiredToken(DfkitError):
    pass


class MalformedToken(DfkitError):
    pass


class TruncatedFrame(DfkitError):
    pass


class EmptySource(DfkitError):
    pass


class DimensionMismatch(DfkitError):
    pass


class DecodeError(DfkitError):
    pass


# histograms
class EmptyFrame(DfkitError):
    pass


class ZeroMass(DfkitError):
    pass


# blinks
class BadPointCount(DfkitError):
    pass


class NonMonotoneFrameIndex(DfkitError):
    pass


class MalformedLine(DfkitError):
    def __init__(self, msg, line_no=None):
        super().__init__(msg if line_no is None else f"line {line_no}: {msg}")
        self.line_no = line_no


class DegenerateEye(DfkitError):
    def __init__(self, msg, frame_index=None):
        super().__init__(msg if frame_index is None else f"frame {frame_index}: {msg}")
        self.frame_index = frame_index


# knn
class EmptyTrainingSet(DfkitError):
    pass


class KTooLarge(DfkitError):
    pass


class InvalidK(DfkitError):
    pass


# temporal net
class ShapeMismatch(DfkitError):
    pass


class EmptyDataset(DfkitError):
    pass


class VersionMismatch(DfkitError):
    pass


class ModelFormatError(DfkitError):
    pass


# evaluation
class EmptyInput(DfkitError):
    pass


class MissingLabels(DfkitError):
    pass


class TooFewVideos(DfkitError):
    pass


class MalformedReport(DfkitError):
    pass


class UnknownVideoId(DfkitError):
    pass
