"""Exception hierarchy shared by every module."""


class SdfAdError(Exception):
    """Base class for all errors raised by this package."""


class MeshIoError(SdfAdError, OSError):
    """A mesh, cloud or label file could not be read or written."""


class ParseError(SdfAdError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyMesh(SdfAdError, ValueError):
    pass


class DegenerateExtent(SdfAdError, ValueError):
    pass


class NoValidFaces(SdfAdError, ValueError):
    pass


class MemoryBudgetExceeded(SdfAdError, MemoryError):
    pass


class DimensionMismatch(SdfAdError, ValueError):
    pass


class NonFiniteActivation(SdfAdError, FloatingPointError):
    pass


class EmptyBatch(SdfAdError, ValueError):
    pass


class TapeMismatch(SdfAdError, ValueError):
    pass


class ShapeMismatch(SdfAdError, ValueError):
    pass


class DivergedLoss(SdfAdError, FloatingPointError):
    pass


class FormatError(SdfAdError, ValueError):
    pass


class ChecksumError(SdfAdError, ValueError):
    pass


class EmptyCloud(SdfAdError, ValueError):
    pass


class SingleClass(SdfAdError, ValueError):
    pass


class NoPositives(SdfAdError, ValueError):
    pass
