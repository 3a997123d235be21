"""Exception types raised across the package."""


class NVSError(Exception):
    """Base class for all errors raised by nvsdiffuse."""


class Behind(NVSError):
    """A world point does not lie in front of the camera."""


class GridTooSmall(NVSError):
    """A requested pyramid would shrink below the minimum grid size."""


class LengthMismatch(NVSError, ValueError):
    pass


class NonFiniteInput(NVSError, ValueError):
    pass


class SingularSystem(NVSError):
    pass


class IoFailure(NVSError, OSError):
    pass


class DatasetError(NVSError):
    """Raised when a dataset directory is incomplete or inconsistent."""

    def __init__(self, message: str, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path is not None else message)


class MissingFile(DatasetError):
    pass


class BadHeader(DatasetError):
    pass


class ResolutionMismatch(DatasetError):
    pass


class PoseCountMismatch(DatasetError):
    pass


class ToleranceNotReached(UserWarning):
    """The iterative solver hit its iteration cap before the tolerance."""
