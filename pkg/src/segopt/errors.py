"""Exception types shared across the package."""


class SegoptError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SegoptError, ValueError):
    pass


class BranchAmbiguityError(SegoptError, ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


class ParseError(SegoptError, ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class AlignmentError(SegoptError):
    pass


class RankDeficiencyError(AlignmentError):
    pass


class ReductionError(SegoptError):
    pass


class ConnectingGapError(SegoptError):
    """Covisibility chain between head and tail is broken."""


class AnchoringError(SegoptError):
    pass


class NumericalFailure(SegoptError):
    pass


class GenerationError(SegoptError):
    pass
