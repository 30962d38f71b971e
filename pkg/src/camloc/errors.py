"""Exception types raised across the camloc pipeline."""


class CamlocError(Exception):
    """Base class for every error raised by this package."""


class FormatError(CamlocError):
    """Tensor file magic, version, or header dictionary is malformed."""


class UnsupportedDtype(CamlocError):
    """Tensor file declares a dtype other than little-endian 32-bit float."""


class UnsupportedSize(CamlocError):
    """Tensor exceeds the 2**31 - 1 element cap."""


class CorruptFile(CamlocError):
    """Declared shape does not match the payload element count."""


class InvalidValue(CamlocError):
    """NaN or Inf encountered where only finite values are allowed."""


class IoError(CamlocError):
    """Underlying file could not be read or written."""


class ShapeError(CamlocError):
    """Operands have incompatible shapes."""


class DegenerateMap(CamlocError):
    """Saliency map is constant and carries no localization signal."""


class DegenerateRoI(CamlocError):
    """Region of interest collapses to zero feature cells."""


class DeltaOutOfRange(CamlocError):
    """Box regression delta too large to exponentiate safely."""


class InvalidProbability(CamlocError):
    """Objectness probability outside the open interval (0, 1)."""


class EmptyEvaluation(CamlocError):
    """No records eligible for the requested metric."""


class MissingAnnotation(CamlocError):
    """A required dataset annotation file is absent."""


class InconsistentIndex(CamlocError):
    """Dataset annotation files disagree about the image set."""


class ParseError(CamlocError):
    """A dataset annotation line could not be parsed.

    Carries the offending file path and 1-based line number.
    """

    def __init__(self, path, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = path
        self.line_number = line_number


class ImageError(CamlocError):
    """Image file could not be decoded."""
