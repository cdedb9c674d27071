"""Exception hierarchy.

``DataError`` subclasses signal bad inputs (files, datasets, shapes) and map to
CLI exit code 2.
"""


class PcdaError(Exception):
    pass


class DataError(PcdaError, ValueError):
    pass


# mesh / point cloud
class MalformedHeader(DataError):
    pass


class CountMismatch(DataError):
    pass


class BadIndex(DataError):
    pass


class DegenerateMesh(DataError):
    pass


class TooManyRequested(DataError):
    pass


class EmptyRoster(DataError):
    pass


# statistics / network
class DimensionMismatch(DataError):
    pass


class BatchTooSmall(DataError):
    pass


class EmptyCloud(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class NonFiniteLoss(PcdaError, ArithmeticError):
    pass


# training
class EmptyDataset(DataError):
    pass


class BatchTooLarge(DataError):
    pass
