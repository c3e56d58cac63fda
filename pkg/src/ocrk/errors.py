"""Exception hierarchy shared by every ocrk module."""


class OcrkError(Exception):
    """Base class for all ocrk errors."""


class UnknownSymbol(OcrkError, KeyError):
    def __init__(self, char):
        self.char = char
        super().__init__(f"character {char!r} is not in the alphabet")

    def __str__(self):
        return self.args[0]


class IndexOutOfRange(OcrkError, IndexError):
    pass


class InvalidLattice(OcrkError, ValueError):
    pass


class EmptyLattice(OcrkError, ValueError):
    pass


class InfeasibleLabel(OcrkError, ValueError):
    pass


class NonFiniteInput(OcrkError, ValueError):
    pass


class TooLarge(OcrkError, ValueError):
    pass


class EmptyTestSet(OcrkError, ValueError):
    pass


class NoGroundTruth(OcrkError, ValueError):
    pass


class EmptyImage(OcrkError, ValueError):
    pass


class BadInputShape(OcrkError, ValueError):
    pass


class ImageUnreadable(OcrkError, IOError):
    pass


class UnrenderableChar(OcrkError, ValueError):
    pass


class EmptyDictionary(OcrkError, ValueError):
    pass


class PlacementFailed(OcrkError, RuntimeError):
    pass


class CheckpointError(OcrkError, ValueError):
    pass


class DuplicateJobId(OcrkError, KeyError):
    pass


class UnknownJob(OcrkError, KeyError):
    pass


class StorageFailure(OcrkError, IOError):
    pass


class CorruptLog(OcrkError, IOError):
    def __init__(self, sequence, offset):
        self.sequence = sequence
        self.offset = offset
        super().__init__(f"corrupt log record after sequence {sequence} at byte {offset}")
