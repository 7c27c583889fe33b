"""Exception hierarchy shared by every stage of the toolkit."""


class RidgekitError(Exception):
    """Base class; the CLI maps any subclass to exit status 2."""


class InputFormatError(RidgekitError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class SegmentationError(RidgekitError):
    pass


class CoreDetectionError(RidgekitError):
    pass


class ExtractionError(RidgekitError):
    pass


class NoMovementError(RidgekitError, ValueError):
    pass


class ClusterError(RidgekitError, ValueError):
    pass


class ParseError(RidgekitError):
    def __init__(self, message: str, line: int, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {message}")


class ReferenceMismatchError(RidgekitError):
    """Cross-file ids do not agree (clusters vs meta-base, labels vs meta-base)."""
