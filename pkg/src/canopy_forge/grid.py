"""Raster value containers: single-band elevation grids and uint8 imagery.

All containers are frozen dataclasses holding read-only numpy arrays, so
instances can be shared freely across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geo import DEFAULT_CRS, AffineTransform, BBox

#: On-disk sentinel for invalid elevation cells. NaNs found in inputs are
#: normalized to this value so "invalid" has exactly one representation.
NODATA = -9999.0


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Grid:
    """Georeferenced single-band float32 raster with nodata semantics."""

    transform: AffineTransform
    values: np.ndarray
    nodata: float = NODATA
    crs_code: int = DEFAULT_CRS

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ValueError(f"grid values must be 2-D, got shape {values.shape}")
        # one invalid representation: NaN (and +-inf) collapse to the sentinel
        bad = ~np.isfinite(values)
        if bad.any():
            values = values.copy()
            values[bad] = self.nodata
        object.__setattr__(self, "values", _freeze(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def bbox(self) -> BBox:
        return self.transform.bbox(self.width, self.height)

    def valid_mask(self) -> np.ndarray:
        """Boolean mask, True where the cell holds a real measurement."""
        return self.values != np.float32(self.nodata)

    def with_values(self, values: np.ndarray) -> "Grid":
        return replace(self, values=values)


@dataclass(frozen=True)
class OpticalImage:
    """3-band uint8 source orthophoto (RGB, or NIR-R-G for the infrared set)."""

    transform: AffineTransform
    bands: np.ndarray
    acquisition_year: float
    crs_code: int = DEFAULT_CRS

    def __post_init__(self):
        bands = np.asarray(self.bands, dtype=np.uint8)
        if bands.ndim != 3 or bands.shape[0] != 3:
            raise ValueError(f"expected (3, h, w) uint8 bands, got {bands.shape}")
        object.__setattr__(self, "bands", _freeze(bands))

    @property
    def height(self) -> int:
        return self.bands.shape[1]

    @property
    def width(self) -> int:
        return self.bands.shape[2]

    @property
    def bbox(self) -> BBox:
        return self.transform.bbox(self.width, self.height)


#: Band order of the harmonized 5-band product.
BAND_ORDER = ("R", "G", "B", "NIR", "NDVI")


@dataclass(frozen=True)
class MultiSpectralImage:
    """Harmonized 5-band uint8 stack in R, G, B, NIR, NDVI order."""

    transform: AffineTransform
    bands: np.ndarray
    acquisition_year: float
    crs_code: int = DEFAULT_CRS

    def __post_init__(self):
        bands = np.asarray(self.bands, dtype=np.uint8)
        if bands.ndim != 3 or bands.shape[0] != len(BAND_ORDER):
            raise ValueError(f"expected (5, h, w) uint8 bands, got {bands.shape}")
        object.__setattr__(self, "bands", _freeze(bands))

    @property
    def height(self) -> int:
        return self.bands.shape[1]

    @property
    def width(self) -> int:
        return self.bands.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bands.shape[1:]

    @property
    def bbox(self) -> BBox:
        return self.transform.bbox(self.width, self.height)
