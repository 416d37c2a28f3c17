"""Exception types shared across the toolkit."""


class DforgeError(Exception):
    """Base class for all toolkit errors."""


class FileFormatError(DforgeError):
    """Binary decode failure; carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BadMagic(FileFormatError):
    pass


class BadVersion(FileFormatError):
    pass


class TruncatedFile(FileFormatError):
    pass


class NegativeValue(FileFormatError):
    pass


class NonFiniteValue(FileFormatError):
    pass


class IoFailure(DforgeError):
    pass


class SchemaError(DforgeError):
    pass


class MissingFile(DforgeError):
    pass


class DuplicateImageId(DforgeError):
    pass


class ConfigInvalid(DforgeError):
    pass


class GridMismatch(DforgeError):
    pass


class DimensionMismatch(DforgeError):
    pass


class UnknownClass(DforgeError):
    pass


class EmptyPool(DforgeError):
    pass


class PoolTooSmall(DforgeError):
    pass


class NoConvergence(DforgeError):
    pass


class IncompleteAnnotation(DforgeError):
    pass


class ClassMismatch(DforgeError):
    pass


class MissingGroundTruth(DforgeError):
    pass


class MissingImprovement(DforgeError):
    pass


class TruthFileMissing(DforgeError):
    pass


class EmptyComponent(DforgeError):
    pass
