"""Exception hierarchy shared across the package."""


class SonomyoError(Exception):
    """Base class for every error raised by this package."""


class DegenerateVector(SonomyoError, ValueError):
    def __init__(self, finger, which="vector"):
        self.finger = finger
        super().__init__(f"zero-length {which} for finger {finger!r}")


class UnrecoverableOcclusion(SonomyoError, ValueError):
    def __init__(self, finger, detail="all frames occluded"):
        self.finger = finger
        super().__init__(f"finger {finger!r}: {detail}")


class OutOfRange(SonomyoError, ValueError):
    def __init__(self, frame_index, timestamp):
        self.frame_index = frame_index
        super().__init__(
            f"trigger for frame {frame_index} at t={timestamp:.6f}s "
            "is outside the mocap time span")


class ConfigError(SonomyoError, ValueError):
    pass


class ShapeError(SonomyoError, ValueError):
    pass


class DegenerateLabels(SonomyoError, ValueError):
    pass


class CacheError(SonomyoError, RuntimeError):
    pass


class DataError(SonomyoError, ValueError):
    pass


class ModelFormatError(SonomyoError, ValueError):
    """Bad magic bytes, unsupported version, or truncated model file."""


class BundleError(SonomyoError, LookupError):
    pass


class MissingModelFile(BundleError, FileNotFoundError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"model file not found: {path}")


class CoverageGap(BundleError):
    def __init__(self, configuration):
        self.configuration = configuration
        super().__init__(f"no CNN model for configuration {configuration!r}")
