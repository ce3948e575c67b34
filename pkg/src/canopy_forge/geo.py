"""Affine grid geometry and bounding-box algebra.

Only axis-aligned, north-up-or-south-up transforms are modelled: rotation
terms are rejected at the I/O boundary, which keeps every pixel<->world
conversion a pair of independent 1-D affine maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

#: Lambert-93, the projected CRS of the French national imagery this pipeline
#: was built around. Everything is configurable but this is the default.
DEFAULT_CRS = 2154


@dataclass(frozen=True)
class AffineTransform:
    """Axis-aligned affine map from pixel indices to projected coordinates.

    ``origin_x``/``origin_y`` locate the outer corner of pixel (0, 0);
    ``pixel_size_y`` is negative for north-up rasters.
    """

    origin_x: float
    origin_y: float
    pixel_size_x: float
    pixel_size_y: float

    def __post_init__(self):
        if not self.pixel_size_x > 0:
            raise ValueError(f"pixel_size_x must be > 0, got {self.pixel_size_x}")
        if self.pixel_size_y == 0:
            raise ValueError("pixel_size_y must be nonzero")

    def shifted(self, col: int, row: int) -> "AffineTransform":
        """Transform of a sub-raster whose pixel (0,0) is our (col,row)."""
        return AffineTransform(
            self.origin_x + col * self.pixel_size_x,
            self.origin_y + row * self.pixel_size_y,
            self.pixel_size_x,
            self.pixel_size_y,
        )

    def bbox(self, width: int, height: int) -> "BBox":
        """Outer bounds of a width x height raster under this transform."""
        x0 = self.origin_x
        x1 = self.origin_x + width * self.pixel_size_x
        y0 = self.origin_y
        y1 = self.origin_y + height * self.pixel_size_y
        return BBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in projected coordinates (meters)."""

    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        if not (self.min_x < self.max_x and self.min_y < self.max_y):
            raise ValueError(f"degenerate bbox: {self}")

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y

    def intersects(self, other: "BBox") -> bool:
        return not (
            other.max_x <= self.min_x
            or other.min_x >= self.max_x
            or other.max_y <= self.min_y
            or other.min_y >= self.max_y
        )


def world_to_pixel(t: AffineTransform, x: float, y: float) -> tuple[int, int]:
    """Map projected coordinates to (col, row) pixel indices.

    Uses the floor rule, so a point on a shared cell edge belongs to the
    cell on the increasing-index side. Indices may be out of range; callers
    bounds-check.
    """
    col = math.floor((x - t.origin_x) / t.pixel_size_x)
    row = math.floor((y - t.origin_y) / t.pixel_size_y)
    return col, row


def pixel_to_world(t: AffineTransform, col: int, row: int) -> tuple[float, float]:
    """Projected coordinates of the CENTER of pixel (col, row)."""
    x = t.origin_x + (col + 0.5) * t.pixel_size_x
    y = t.origin_y + (row + 0.5) * t.pixel_size_y
    return x, y


def bbox_contains(outer: BBox, inner: BBox) -> bool:
    """True iff ``inner`` lies inside ``outer`` (closed on all four edges)."""
    return (
        inner.min_x >= outer.min_x
        and inner.min_y >= outer.min_y
        and inner.max_x <= outer.max_x
        and inner.max_y <= outer.max_y
    )
