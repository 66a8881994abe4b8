"""Exception types raised across the package."""


class XRegError(Exception):
    """Base class for all package errors."""


class BehindCamera(XRegError):
    pass


class InvalidDepth(XRegError):
    pass


class EmptyInput(XRegError):
    pass


class PartitionError(XRegError):
    pass


class ShapeError(XRegError):
    pass


class EmptyMemory(XRegError):
    pass


class ZeroVector(XRegError):
    pass


class TooFewPoints(XRegError):
    pass


class DegenerateConfiguration(XRegError):
    pass


class RegistrationFailed(XRegError):
    pass


class GenerationError(XRegError):
    pass


class EmptyDataset(XRegError):
    pass


class TrainingDiverged(XRegError):
    pass


class FormatError(XRegError):
    """A file does not match the expected binary or JSON layout."""
