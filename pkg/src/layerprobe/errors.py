"""Exception types shared across the package."""


class LayerprobeError(Exception):
    """Base class for all package-specific errors."""


class StoreFormatError(LayerprobeError):
    """A representation store file is malformed."""


class BadMagic(StoreFormatError):
    """File does not start with the LPRS magic bytes."""


class UnsupportedVersion(StoreFormatError):
    """File declares a format version this reader does not understand."""


class TruncatedStore(StoreFormatError):
    """File is shorter than its header promises."""


class InvariantViolation(LayerprobeError):
    """A store's header or payload is internally inconsistent."""


class TaskFormatError(LayerprobeError):
    """A task file or its sidecar is malformed."""


class TrainingDiverged(LayerprobeError):
    """A loss or gradient became non-finite during optimization."""


class DegenerateRdm(LayerprobeError):
    """A dissimilarity matrix has zero variance, so correlation is undefined."""
