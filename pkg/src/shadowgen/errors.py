"""Exception types shared across the package."""


class ShadowGenError(Exception):
    """Base class for all package errors."""


class EmptyMask(ShadowGenError, ValueError):
    pass


class DegenerateBox(ShadowGenError, ValueError):
    pass


class OutOfFrame(ShadowGenError, ValueError):
    pass


class ShapeMismatch(ShadowGenError, ValueError):
    pass


class EmptyShadow(ShadowGenError, ValueError):
    pass


class EmptyForeground(ShadowGenError, ValueError):
    """Raised when the predicted shadow mask has (numerically) zero mass."""


class EmptyRegion(ShadowGenError, ValueError):
    pass


class DegenerateMask(ShadowGenError, ValueError):
    pass


class CorruptDataset(ShadowGenError, IOError):
    pass


class DatasetEmpty(ShadowGenError, ValueError):
    pass


class SchemaMismatch(ShadowGenError, ValueError):
    """Checkpoint or dataset written with an incompatible schema version."""


class ConfigError(ShadowGenError, ValueError):
    pass


class NonFiniteLoss(ShadowGenError, FloatingPointError):
    def __init__(self, message, batch_ids=()):
        super().__init__(message)
        self.batch_ids = list(batch_ids)
