"""Exception types raised across the toolkit."""


class PPCError(Exception):
    """Base class for every error raised by ppcfilter."""


class DegeneratePointError(PPCError, ValueError):
    """A point sits exactly at the sensor origin where angles are undefined."""


class CadFormatError(PPCError, ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class InsufficientModelError(PPCError, ValueError):
    """Fewer than three points in a CAD model."""


class DegenerateModelError(PPCError, ValueError):
    """A CAD model with zero extent along some axis."""


class InvalidGeometryError(PPCError, ValueError):
    """Box placement the search-area construction cannot handle."""


class KittiFormatError(PPCError, ValueError):
    def __init__(self, lineno, message, path=None):
        where = f"{path}:{lineno}" if path is not None else f"line {lineno}"
        super().__init__(f"{where}: {message}")
        self.lineno = lineno
        self.path = path


class TruncatedFileError(PPCError, ValueError):
    """Velodyne scan length is not a multiple of 16 bytes."""


class MissingCalibrationError(PPCError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing calibration"


class InvalidCalibrationError(PPCError, ValueError):
    """Calibration matrices cannot be inverted."""


class UndefinedRecallError(PPCError, ValueError):
    """Recall is undefined because there are no ground truths."""


class InvalidComparisonError(PPCError, ValueError):
    """Two evaluation reports do not cover the same frames."""


class SceneFormatError(PPCError, ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
