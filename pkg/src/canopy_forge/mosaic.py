"""Merging dated canopy-height tiles onto an optical tile's grid.

Overlaps resolve to the most recent *valid* measurement per cell: a newer
tile's nodata hole never erases an older valid value. The mosaic records
the plain mean acquisition year of all contributing tiles, which becomes
the target timestamp of the training samples cut from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CellSizeMismatch, DisjointExtent, EmptyInput
from .geo import AffineTransform, BBox
from .grid import NODATA, Grid

_YEAR_RANGE = (2000.0, 2100.0)


@dataclass(frozen=True)
class DatedGrid:
    grid: Grid
    acquisition_year: float
    source_id: str = ""

    def __post_init__(self):
        if not _YEAR_RANGE[0] <= self.acquisition_year <= _YEAR_RANGE[1]:
            raise ValueError(f"implausible acquisition year {self.acquisition_year}")


@dataclass(frozen=True)
class Mosaic:
    grid: Grid
    mean_year: float
    source_count: int

    def __post_init__(self):
        if self.source_count < 1:
            raise ValueError("mosaic needs at least one source tile")


def _lattice_offset(tile: Grid, target: AffineTransform) -> tuple[int, int]:
    """Pixel offset of the tile's (0,0) inside the target grid; the tile
    must sit on the target's cell lattice."""
    dx = (tile.transform.origin_x - target.origin_x) / target.pixel_size_x
    dy = (tile.transform.origin_y - target.origin_y) / target.pixel_size_y
    col, row = round(dx), round(dy)
    if abs(dx - col) > 1e-6 or abs(dy - row) > 1e-6:
        raise CellSizeMismatch(
            f"tile origin {tile.transform.origin_x, tile.transform.origin_y} "
            "is not on the target cell lattice")
    return col, row


def merge(tiles: list[DatedGrid], target: AffineTransform, width: int,
          height: int, crs_code: int | None = None) -> Mosaic:
    """Resolve each target cell to the value of the newest tile that covers
    it with a valid measurement (year ties break on source_id, then input
    order). ``mean_year`` is the unweighted mean over all input tiles."""
    if not tiles:
        raise EmptyInput("merge needs at least one tile")
    for dated in tiles:
        t = dated.grid.transform
        if (abs(t.pixel_size_x - target.pixel_size_x) > 1e-9
                or abs(t.pixel_size_y - target.pixel_size_y) > 1e-9):
            raise CellSizeMismatch(
                f"tile cell {t.pixel_size_x}x{t.pixel_size_y} differs from "
                f"target {target.pixel_size_x}x{target.pixel_size_y}")

    if crs_code is None:
        crs_code = tiles[0].grid.crs_code

    values = np.full((height, width), NODATA, dtype=np.float32)
    filled = np.zeros((height, width), dtype=bool)

    order = sorted(range(len(tiles)),
                   key=lambda i: (-tiles[i].acquisition_year, tiles[i].source_id, i))
    for i in order:
        tile = tiles[i].grid
        col0, row0 = _lattice_offset(tile, target)
        src_r0 = max(0, -row0)
        src_c0 = max(0, -col0)
        src_r1 = min(tile.height, height - row0)
        src_c1 = min(tile.width, width - col0)
        if src_r0 >= src_r1 or src_c0 >= src_c1:
            continue
        dst = (slice(row0 + src_r0, row0 + src_r1),
               slice(col0 + src_c0, col0 + src_c1))
        src = (slice(src_r0, src_r1), slice(src_c0, src_c1))
        takeable = tile.valid_mask()[src] & ~filled[dst]
        values[dst][takeable] = tile.values[src][takeable]
        filled[dst] |= takeable

    grid = Grid(target, values, NODATA, crs_code)
    mean_year = math.fsum(d.acquisition_year for d in tiles) / len(tiles)
    return Mosaic(grid, mean_year, len(tiles))


def crop_to(grid: Grid, bbox: BBox) -> Grid:
    """Sub-grid covering the bbox (snapped outward to cell edges); cells
    outside the source are nodata."""
    t = grid.transform
    col0 = math.floor((bbox.min_x - t.origin_x) / t.pixel_size_x + 1e-9)
    col1 = math.ceil((bbox.max_x - t.origin_x) / t.pixel_size_x - 1e-9)
    row0 = math.floor((bbox.max_y - t.origin_y) / t.pixel_size_y + 1e-9)
    row1 = math.ceil((bbox.min_y - t.origin_y) / t.pixel_size_y - 1e-9)
    if col1 <= 0 or col0 >= grid.width or row1 <= 0 or row0 >= grid.height:
        raise DisjointExtent(f"bbox {bbox} does not overlap grid {grid.bbox}")

    width = col1 - col0
    height = row1 - row0
    values = np.full((height, width), grid.nodata, dtype=np.float32)
    src_r0, src_c0 = max(row0, 0), max(col0, 0)
    src_r1, src_c1 = min(row1, grid.height), min(col1, grid.width)
    values[src_r0 - row0:src_r1 - row0, src_c0 - col0:src_c1 - col0] = \
        grid.values[src_r0:src_r1, src_c0:src_c1]
    return Grid(t.shifted(col0, row0), values, grid.nodata, grid.crs_code)
