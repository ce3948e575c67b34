"""Terrain and surface rasterization and canopy-height derivation.

Ground returns become the terrain model, vegetation returns the surface
model; the terrain model is smoothed with a square moving-average filter
(10 m side by default) to close gaps in ground coverage, and the canopy
height map is the clamped difference of the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyExtent, GridMismatch, NoGroundPoints
from .geo import AffineTransform, BBox
from .grid import NODATA, Grid
from .lasio import adjusted_gps_to_year
from .pointcloud import ClassFilter, open_cloud, split_by_class, stream_batches

STATISTICS = ("mean", "min", "max")

#: streaming batch size for cloud processing; bounds peak memory
_BATCH_SIZE = 262_144


@dataclass(frozen=True)
class RasterizerConfig:
    cell_size: float = 0.5
    dtm_statistic: str = "mean"
    dsm_statistic: str = "max"
    smoothing_window: float = 10.0
    class_filter: ClassFilter = ClassFilter()

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.smoothing_window < self.cell_size:
            raise ValueError("smoothing window must be at least one cell")
        if self.dtm_statistic not in ("mean", "min"):
            raise ValueError(f"dtm_statistic {self.dtm_statistic!r} not in (mean, min)")
        if self.dsm_statistic != "max":
            raise ValueError("dsm_statistic must be 'max'")


class _CellAccumulator:
    """Per-cell statistic accumulator over a fixed grid; merging batches is
    order-independent (sum/count for means; min/max are associative)."""

    def __init__(self, statistic: str, bbox: BBox, cell_size: float,
                 height: int, width: int):
        if statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {statistic!r}")
        self.statistic = statistic
        self._min_x = bbox.min_x
        self._max_y = bbox.max_y
        self._inv_cell = 1.0 / cell_size
        if statistic == "mean":
            self._sums = np.zeros((height, width), dtype=np.float64)
            self._counts = np.zeros((height, width), dtype=np.int64)
        elif statistic == "max":
            self._extreme = np.full((height, width), -np.inf, dtype=np.float64)
        else:
            self._extreme = np.full((height, width), np.inf, dtype=np.float64)
        self.touched = False

    def update(self, xs: np.ndarray, ys: np.ndarray, zs: np.ndarray):
        if len(xs) == 0:
            return
        self.touched = True
        xs = np.ascontiguousarray(xs, dtype=np.float64)
        ys = np.ascontiguousarray(ys, dtype=np.float64)
        zs = np.ascontiguousarray(zs, dtype=np.float64)
        if self.statistic == "mean":
            kernels.accum_mean(self._sums, self._counts, xs, ys, zs,
                               self._min_x, self._max_y, self._inv_cell)
        elif self.statistic == "max":
            kernels.accum_max(self._extreme, xs, ys, zs,
                              self._min_x, self._max_y, self._inv_cell)
        else:
            kernels.accum_min(self._extreme, xs, ys, zs,
                              self._min_x, self._max_y, self._inv_cell)

    def finalize(self) -> np.ndarray:
        if self.statistic == "mean":
            values = np.full(self._sums.shape, NODATA, dtype=np.float64)
            hit = self._counts > 0
            values[hit] = self._sums[hit] / self._counts[hit]
            return values.astype(np.float32)
        values = self._extreme.copy()
        values[~np.isfinite(values)] = NODATA
        return values.astype(np.float32)


def grid_shape_for(bbox: BBox, cell_size: float) -> tuple[int, int]:
    """Cell counts covering the bbox: ceil(extent / cell)."""
    width = math.ceil(bbox.width / cell_size - 1e-9)
    height = math.ceil(bbox.height / cell_size - 1e-9)
    if width <= 0 or height <= 0:
        raise EmptyExtent(f"bbox {bbox} has no area at cell size {cell_size}")
    return width, height


def snap_to_lattice(bbox: BBox, cell_size: float) -> BBox:
    """Grow the bbox outward to the global cell lattice, so rasters from
    different clouds land on one shared grid and mosaic without resampling."""
    return BBox(
        math.floor(bbox.min_x / cell_size) * cell_size,
        math.floor(bbox.min_y / cell_size) * cell_size,
        math.ceil(bbox.max_x / cell_size) * cell_size,
        math.ceil(bbox.max_y / cell_size) * cell_size,
    )


def rasterize(batches, bbox: BBox, cfg: RasterizerConfig,
              statistic: str = "mean") -> Grid:
    """Grid each cell to the statistic of point elevations falling in it
    (half-open cell membership via the floor rule, out-of-extent points
    dropped); cells without points are nodata."""
    width, height = grid_shape_for(bbox, cfg.cell_size)
    acc = _CellAccumulator(statistic, bbox, cfg.cell_size, height, width)
    for batch in batches:
        acc.update(batch.xs, batch.ys, batch.zs)
    transform = AffineTransform(bbox.min_x, bbox.max_y, cfg.cell_size, -cfg.cell_size)
    return Grid(transform, acc.finalize())


def smooth_square(grid: Grid, window: float) -> Grid:
    """Square moving-average over valid cells.

    The window is ``window`` meters wide, converted to a pixel radius by
    flooring (10 m at 0.5 m cells -> a 21x21-cell window). Output cells are
    nodata only where the window contains no valid cell, so the filter both
    smooths measured terrain and fills small gaps.
    """
    cell = grid.transform.pixel_size_x
    if window < cell:
        raise ValueError(f"window {window} smaller than cell size {cell}")
    radius = int(window / (2 * cell))
    valid = grid.valid_mask()
    masked = np.where(valid, grid.values, 0.0).astype(np.float64)
    means, counts = kernels.box_mean_valid(
        np.ascontiguousarray(masked),
        np.ascontiguousarray(valid.astype(np.uint8)), radius)
    values = np.where(counts > 0, means, NODATA).astype(np.float32)
    return grid.with_values(values)


def derive_chm(dsm: Grid, dtm_smoothed: Grid) -> Grid:
    """Canopy height = surface minus smoothed terrain, clamped at zero;
    nodata wherever either input is nodata."""
    if dsm.shape != dtm_smoothed.shape or dsm.transform != dtm_smoothed.transform:
        raise GridMismatch(
            f"surface {dsm.shape}/{dsm.transform} vs terrain "
            f"{dtm_smoothed.shape}/{dtm_smoothed.transform}")
    both = dsm.valid_mask() & dtm_smoothed.valid_mask()
    heights = np.maximum(dsm.values.astype(np.float64)
                         - dtm_smoothed.values.astype(np.float64), 0.0)
    values = np.where(both, heights, NODATA).astype(np.float32)
    return dsm.with_values(values)


def process_cloud_tile(path, cfg: RasterizerConfig,
                       year_override: float | None = None
                       ) -> tuple[Grid, float | None]:
    """Full per-tile chain: stream points, split classes, rasterize the
    terrain and surface models, smooth the terrain, subtract.

    Returns the canopy height grid and the acquisition year (catalog
    override first, else the mean GPS time of the tile's points, else None).
    """
    handle = open_cloud(path)
    if handle.bbox is None:
        raise NoGroundPoints(f"{path}: cloud is empty")
    bbox = snap_to_lattice(handle.bbox, cfg.cell_size)
    width, height = grid_shape_for(bbox, cfg.cell_size)

    ground_acc = _CellAccumulator(cfg.dtm_statistic, bbox, cfg.cell_size,
                                  height, width)
    veg_acc = _CellAccumulator(cfg.dsm_statistic, bbox, cfg.cell_size,
                               height, width)
    gps_sum = 0.0
    gps_count = 0

    for batch in stream_batches(handle, _BATCH_SIZE):
        if batch.gps_times is not None:
            gps_sum += float(batch.gps_times.sum())
            gps_count += batch.count
        ground, vegetation = split_by_class(batch, cfg.class_filter)
        if ground is not None:
            ground_acc.update(ground.xs, ground.ys, ground.zs)
        if vegetation is not None:
            veg_acc.update(vegetation.xs, vegetation.ys, vegetation.zs)

    if not ground_acc.touched:
        raise NoGroundPoints(f"{path}: no ground-class returns")

    transform = AffineTransform(bbox.min_x, bbox.max_y, cfg.cell_size, -cfg.cell_size)
    dtm = Grid(transform, ground_acc.finalize())
    dsm = Grid(transform, veg_acc.finalize())
    chm = derive_chm(dsm, smooth_square(dtm, cfg.smoothing_window))

    year = year_override
    if year is None and gps_count and handle.header.global_encoding & 1:
        year = adjusted_gps_to_year(gps_sum / gps_count)
    return chm, year
