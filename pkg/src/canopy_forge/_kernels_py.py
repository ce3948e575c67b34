"""Pure-numpy implementations of the hot kernels.

Used whenever the compiled extension is unavailable; same contract as
``_kernels.pyx``. The vectorized strategies differ from the compiled
loops (bincount / segmented reductions / integral images) but produce
identical results, which the kernel test suite asserts.
"""

from __future__ import annotations

import numpy as np


def _flat_indices(shape, xs, ys, min_x, max_y, inv_cell):
    h, w = shape
    fc = (xs - min_x) * inv_cell
    fr = (max_y - ys) * inv_cell
    keep = (fc >= 0) & (fc < w) & (fr >= 0) & (fr < h)
    flat = fr[keep].astype(np.int64) * w + fc[keep].astype(np.int64)
    return flat, keep


def accum_mean(sums: np.ndarray, counts: np.ndarray, xs, ys, zs,
               min_x: float, max_y: float, inv_cell: float) -> None:
    flat, keep = _flat_indices(sums.shape, xs, ys, min_x, max_y, inv_cell)
    size = sums.size
    sums.ravel()[:] += np.bincount(flat, weights=zs[keep], minlength=size)
    counts.ravel()[:] += np.bincount(flat, minlength=size)


def _accum_extreme(target, xs, ys, zs, min_x, max_y, inv_cell, reducer):
    flat, keep = _flat_indices(target.shape, xs, ys, min_x, max_y, inv_cell)
    if flat.size == 0:
        return
    values = zs[keep]
    order = np.argsort(flat, kind="stable")
    flat = flat[order]
    values = values[order]
    starts = np.flatnonzero(np.r_[True, flat[1:] != flat[:-1]])
    extremes = reducer.reduceat(values, starts)
    idx = flat[starts]
    out = target.ravel()
    out[idx] = reducer(out[idx], extremes)


def accum_max(maxima: np.ndarray, xs, ys, zs, min_x: float, max_y: float,
              inv_cell: float) -> None:
    _accum_extreme(maxima, xs, ys, zs, min_x, max_y, inv_cell, np.maximum)


def accum_min(minima: np.ndarray, xs, ys, zs, min_x: float, max_y: float,
              inv_cell: float) -> None:
    _accum_extreme(minima, xs, ys, zs, min_x, max_y, inv_cell, np.minimum)


def box_mean_valid(values: np.ndarray, valid: np.ndarray, radius: int
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Mean of valid cells in the centered square window, clipped at the
    borders. Returns (means float64, valid-in-window counts int64).

    Integral-image formulation: two prefix sums make the cost independent
    of the window size.
    """
    h, w = values.shape
    masked = np.where(valid.astype(bool), values.astype(np.float64), 0.0)

    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = masked.cumsum(axis=0).cumsum(axis=1)
    integral_n = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral_n[1:, 1:] = valid.astype(np.int64).cumsum(axis=0).cumsum(axis=1)

    r = np.arange(h)
    c = np.arange(w)
    r1 = np.maximum(r - radius, 0)
    r2 = np.minimum(r + radius + 1, h)
    c1 = np.maximum(c - radius, 0)
    c2 = np.minimum(c + radius + 1, w)

    def window_sum(table):
        return (table[np.ix_(r2, c2)] - table[np.ix_(r1, c2)]
                - table[np.ix_(r2, c1)] + table[np.ix_(r1, c1)])

    sums = window_sum(integral)
    counts = window_sum(integral_n)
    means = np.divide(sums, counts, out=np.zeros_like(sums),
                      where=counts > 0)
    return means, counts
