"""Exception hierarchy shared by all pipeline stages."""


class CanopyForgeError(Exception):
    """Base class for every error raised by this package."""


# --- file I/O ---------------------------------------------------------------

class MalformedFile(CanopyForgeError):
    """File exists but its contents violate the format it claims to be."""


class UnsupportedLayout(CanopyForgeError):
    """Valid file, but uses a layout we deliberately do not handle
    (rotated transforms, exotic dtypes, unknown compression)."""


class UnsupportedVersion(CanopyForgeError):
    """Valid point-cloud file using a format version outside our subset."""


class IoFailure(CanopyForgeError):
    """OS-level read/write failure (permissions, missing directory, disk)."""


# --- ingest -----------------------------------------------------------------

class MalformedCatalog(CanopyForgeError):
    """Catalog row is missing fields or cannot be parsed."""


class FetchFailure(CanopyForgeError):
    def __init__(self, tile_id: str, attempts: int, cause: str = ""):
        self.tile_id = tile_id
        self.attempts = attempts
        msg = f"fetch of tile {tile_id!r} failed after {attempts} attempt(s)"
        if cause:
            msg += f": {cause}"
        super().__init__(msg)


# --- elevation --------------------------------------------------------------

class EmptyExtent(CanopyForgeError):
    """Requested raster extent has zero area."""


class GridMismatch(CanopyForgeError):
    """Two grids expected to share shape/transform do not."""


class NoGroundPoints(CanopyForgeError):
    """Cloud tile has no ground-class returns, so no terrain model exists."""


# --- mosaic -----------------------------------------------------------------

class EmptyInput(CanopyForgeError):
    """Operation needs at least one input tile."""


class CellSizeMismatch(CanopyForgeError):
    """Tiles fed to a merge do not share the target cell size."""


class DisjointExtent(CanopyForgeError):
    """Crop window does not overlap the source grid at all."""


# --- harmonize --------------------------------------------------------------

class ShapeMismatch(CanopyForgeError):
    """Arrays expected to share a shape do not."""


class AlignmentMismatch(CanopyForgeError):
    """Rasters expected to share a transform are not co-registered."""


class CoverageGap(CanopyForgeError):
    """Resample target extends past the source image footprint."""


# --- sampler ----------------------------------------------------------------

class InsufficientTimestamps(CanopyForgeError):
    """Fewer than three acquisition years available for a department."""


class NonCausalTimestamp(CanopyForgeError):
    """An input timestamp is not strictly earlier than the target year."""


# --- metrics ----------------------------------------------------------------

class EmptyMask(CanopyForgeError):
    """Metric denominator would be zero: no valid (or no tree) pixels."""


# --- pipeline ---------------------------------------------------------------

class ConfigError(CanopyForgeError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field {field!r}: {message}")


class StageFailure(CanopyForgeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


class DataError(CanopyForgeError):
    """A referenced tile could not be read; callers may skip and continue."""
