"""Building the 5-band product and resampling it onto the canopy grid.

The vegetation-index band is computed from the near-infrared and red
planes and re-expressed as uint8 by mapping [-1, 1] onto [0, 255], which
keeps the stack homogeneous in type. After any resample the index band is
recomputed from the resampled planes rather than resampled itself: a
ratio of averages is not the average of ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentMismatch, CoverageGap, ShapeMismatch
from .geo import AffineTransform
from .grid import MultiSpectralImage, OpticalImage


@dataclass(frozen=True)
class OpticalPair:
    """Co-registered RGB and NIR-R-G orthophotos of the same acquisition."""

    rgb: OpticalImage
    nirrg: OpticalImage

    def __post_init__(self):
        if self.rgb.bands.shape != self.nirrg.bands.shape:
            raise AlignmentMismatch(
                f"rgb {self.rgb.bands.shape} vs nirrg {self.nirrg.bands.shape}")
        if not _transforms_close(self.rgb.transform, self.nirrg.transform):
            raise AlignmentMismatch(
                f"rgb transform {self.rgb.transform} vs nirrg {self.nirrg.transform}")
        if self.rgb.acquisition_year != self.nirrg.acquisition_year:
            raise AlignmentMismatch("pair members have different acquisition years")

    @property
    def acquisition_year(self) -> float:
        return self.rgb.acquisition_year


def _transforms_close(a: AffineTransform, b: AffineTransform) -> bool:
    # up to half a source pixel of slack before declaring misregistration
    tol = 0.5 * min(a.pixel_size_x, b.pixel_size_x)
    return (abs(a.origin_x - b.origin_x) <= tol
            and abs(a.origin_y - b.origin_y) <= tol
            and abs(a.pixel_size_x - b.pixel_size_x) <= 1e-9
            and abs(a.pixel_size_y - b.pixel_size_y) <= 1e-9)


def _round_u8(values: np.ndarray) -> np.ndarray:
    """Round half away from zero and clamp to the uint8 range."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def compute_ndvi_u8(nir: np.ndarray, red: np.ndarray) -> np.ndarray:
    """Vegetation index from uint8 planes, encoded back to uint8.

    (nir-red)/(nir+red) with the 0/0 case defined as 0 (code 128); such
    pixels are zero imagery and get masked out downstream anyway.
    """
    if nir.shape != red.shape:
        raise ShapeMismatch(f"nir {nir.shape} vs red {red.shape}")
    nir_f = nir.astype(np.float64)
    red_f = red.astype(np.float64)
    total = nir_f + red_f
    ndvi = np.divide(nir_f - red_f, total, out=np.zeros_like(total),
                     where=total > 0)
    return _round_u8((ndvi + 1.0) / 2.0 * 255.0)


def stack_bands(pair: OpticalPair) -> MultiSpectralImage:
    """Stack [R, G, B, NIR, NDVI]; NIR is the first plane of the NIR-R-G
    product and NDVI is computed from NIR and R."""
    rgb = pair.rgb.bands
    nir = pair.nirrg.bands[0]
    ndvi = compute_ndvi_u8(nir, rgb[0])
    bands = np.stack([rgb[0], rgb[1], rgb[2], nir, ndvi])
    return MultiSpectralImage(pair.rgb.transform, bands, pair.acquisition_year,
                              pair.rgb.crs_code)


# --- resampling -----------------------------------------------------------


def _axis_overlap(src_origin: float, src_step: float, src_n: int,
                  tgt_origin: float, tgt_step: float, tgt_n: int
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Per-target-cell source indices and area weights along one axis.

    Works in source-pixel units so the same code serves both axes (the y
    axis has negative steps; the ratio of steps stays positive).
    """
    ratio = tgt_step / src_step
    start = (tgt_origin - src_origin) / src_step
    k_max = math.ceil(ratio) + 1
    idx = np.zeros((tgt_n, k_max), dtype=np.int64)
    weights = np.zeros((tgt_n, k_max), dtype=np.float64)
    for j in range(tgt_n):
        lo = start + j * ratio
        hi = lo + ratio
        first = math.floor(lo + 1e-9)
        for k in range(k_max):
            cell = first + k
            overlap = min(hi, cell + 1) - max(lo, cell)
            if overlap <= 1e-12:
                continue
            clamped = min(max(cell, 0), src_n - 1)
            idx[j, k] = clamped
            weights[j, k] = overlap / ratio
    return idx, weights


def _area_average(band: np.ndarray, y_idx, y_w, x_idx, x_w) -> np.ndarray:
    rows = (band[y_idx, :] * y_w[:, :, np.newaxis]).sum(axis=1)
    return (rows[:, x_idx] * x_w[np.newaxis, :, :]).sum(axis=2)


def _bilinear(band: np.ndarray, fy: np.ndarray, fx: np.ndarray) -> np.ndarray:
    h, w = band.shape
    fy = np.clip(fy, 0.0, h - 1.0)
    fx = np.clip(fx, 0.0, w - 1.0)
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (fy - y0)[:, np.newaxis]
    wx = (fx - x0)[np.newaxis, :]
    values = band.astype(np.float64)
    top = values[y0][:, x0] * (1 - wx) + values[y0][:, x1] * wx
    bottom = values[y1][:, x0] * (1 - wx) + values[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def resample_to(image: MultiSpectralImage, target: AffineTransform,
                width: int, height: int) -> MultiSpectralImage:
    """Resample onto the target grid: area-weighted averaging when the
    target cell is at least as large as the source cell (aggregation),
    bilinear interpolation at cell centers when upsampling. The NDVI band
    is recomputed from the resampled NIR and R planes."""
    src = image.transform
    target_box = target.bbox(width, height)
    source_box = src.bbox(image.width, image.height)
    slack = 1e-6 * src.pixel_size_x
    if (target_box.min_x < source_box.min_x - slack
            or target_box.max_x > source_box.max_x + slack
            or target_box.min_y < source_box.min_y - slack
            or target_box.max_y > source_box.max_y + slack):
        raise CoverageGap(
            f"target extent {target_box} extends past source {source_box}")

    downsampling = target.pixel_size_x >= src.pixel_size_x - 1e-12
    planes = []
    if downsampling:
        y_idx, y_w = _axis_overlap(src.origin_y, src.pixel_size_y, image.height,
                                   target.origin_y, target.pixel_size_y, height)
        x_idx, x_w = _axis_overlap(src.origin_x, src.pixel_size_x, image.width,
                                   target.origin_x, target.pixel_size_x, width)
        for b in range(4):
            f = _area_average(image.bands[b].astype(np.float64), y_idx, y_w,
                              x_idx, x_w)
            planes.append(_round_u8(f))
    else:
        xs = target.origin_x + (np.arange(width) + 0.5) * target.pixel_size_x
        ys = target.origin_y + (np.arange(height) + 0.5) * target.pixel_size_y
        fx = (xs - src.origin_x) / src.pixel_size_x - 0.5
        fy = (ys - src.origin_y) / src.pixel_size_y - 0.5
        for b in range(4):
            planes.append(_round_u8(_bilinear(image.bands[b], fy, fx)))

    planes.append(compute_ndvi_u8(planes[3], planes[0]))
    return MultiSpectralImage(target, np.stack(planes), image.acquisition_year,
                              image.crs_code)
