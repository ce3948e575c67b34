# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops: fused point-to-cell accumulation and the moving
square mean. Mirrors the contract of ``_kernels_py`` exactly; the facade
in ``kernels.py`` picks whichever implementation imported successfully.

The accumulators fuse index computation, bounds check and update into one
pass so no intermediate index arrays are materialized.
"""

import numpy as np


def accum_mean(double[:, ::1] sums, long long[:, ::1] counts,
               double[::1] xs, double[::1] ys, double[::1] zs,
               double min_x, double max_y, double inv_cell):
    cdef Py_ssize_t i, n = xs.shape[0]
    cdef Py_ssize_t h = sums.shape[0], w = sums.shape[1]
    cdef double fc, fr
    cdef Py_ssize_t c, r
    for i in range(n):
        fc = (xs[i] - min_x) * inv_cell
        fr = (max_y - ys[i]) * inv_cell
        if fc < 0 or fr < 0 or fc >= w or fr >= h:
            continue
        c = <Py_ssize_t>fc
        r = <Py_ssize_t>fr
        sums[r, c] += zs[i]
        counts[r, c] += 1


def accum_max(double[:, ::1] maxima, double[::1] xs, double[::1] ys,
              double[::1] zs, double min_x, double max_y, double inv_cell):
    cdef Py_ssize_t i, n = xs.shape[0]
    cdef Py_ssize_t h = maxima.shape[0], w = maxima.shape[1]
    cdef double fc, fr, v
    cdef Py_ssize_t c, r
    for i in range(n):
        fc = (xs[i] - min_x) * inv_cell
        fr = (max_y - ys[i]) * inv_cell
        if fc < 0 or fr < 0 or fc >= w or fr >= h:
            continue
        c = <Py_ssize_t>fc
        r = <Py_ssize_t>fr
        v = zs[i]
        if v > maxima[r, c]:
            maxima[r, c] = v


def accum_min(double[:, ::1] minima, double[::1] xs, double[::1] ys,
              double[::1] zs, double min_x, double max_y, double inv_cell):
    cdef Py_ssize_t i, n = xs.shape[0]
    cdef Py_ssize_t h = minima.shape[0], w = minima.shape[1]
    cdef double fc, fr, v
    cdef Py_ssize_t c, r
    for i in range(n):
        fc = (xs[i] - min_x) * inv_cell
        fr = (max_y - ys[i]) * inv_cell
        if fc < 0 or fr < 0 or fc >= w or fr >= h:
            continue
        c = <Py_ssize_t>fc
        r = <Py_ssize_t>fr
        v = zs[i]
        if v < minima[r, c]:
            minima[r, c] = v


def box_mean_valid(double[:, ::1] values, unsigned char[:, ::1] valid,
                   int radius):
    """Mean of valid cells in the centered (2*radius+1)^2 window, clipped at
    the borders. Returns (means float64, window-valid-count int64); cells
    whose window holds no valid input have count 0.

    Sliding-window accumulation: per-column running sums over the row
    window, then a running sum across columns, so cost is independent of
    the window size.
    """
    cdef Py_ssize_t h = values.shape[0]
    cdef Py_ssize_t w = values.shape[1]
    means_arr = np.zeros((h, w), dtype=np.float64)
    count_arr = np.zeros((h, w), dtype=np.int64)
    colsum_arr = np.zeros(w, dtype=np.float64)
    colcnt_arr = np.zeros(w, dtype=np.int64)
    cdef double[:, ::1] means = means_arr
    cdef long long[:, ::1] count = count_arr
    cdef double[::1] colsum = colsum_arr
    cdef long long[::1] colcnt = colcnt_arr
    cdef Py_ssize_t r, c, rr
    cdef double run_sum
    cdef long long run_cnt

    # seed the column accumulators with rows [0, radius]
    for rr in range(min(radius + 1, h)):
        for c in range(w):
            if valid[rr, c]:
                colsum[c] += values[rr, c]
                colcnt[c] += 1

    for r in range(h):
        if r > 0:
            rr = r + radius
            if rr < h:
                for c in range(w):
                    if valid[rr, c]:
                        colsum[c] += values[rr, c]
                        colcnt[c] += 1
            rr = r - radius - 1
            if rr >= 0:
                for c in range(w):
                    if valid[rr, c]:
                        colsum[c] -= values[rr, c]
                        colcnt[c] -= 1

        run_sum = 0.0
        run_cnt = 0
        for c in range(min(radius + 1, w)):
            run_sum += colsum[c]
            run_cnt += colcnt[c]
        for c in range(w):
            if run_cnt > 0:
                means[r, c] = run_sum / run_cnt
            count[r, c] = run_cnt
            if c + radius + 1 < w:
                run_sum += colsum[c + radius + 1]
                run_cnt += colcnt[c + radius + 1]
            if c - radius >= 0:
                run_sum -= colsum[c - radius]
                run_cnt -= colcnt[c - radius]

    return means_arr, count_arr
