#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback, plus the
point-cloud codec in whatever form it was built.

Run after installing the package:

    python3 benchmarks/bench_kernels.py [--points N] [--grid N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from canopy_forge import _kernels_py, kernels
from canopy_forge.lasio import year_to_adjusted_gps
from canopy_forge.pointcloud import open_cloud, stream_batches, write_point_cloud


def best_of(fn, repeats=3):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def bench_accumulate(n_points: int):
    rng = np.random.default_rng(0)
    xs = rng.uniform(0, 1000, n_points)
    ys = rng.uniform(0, 1000, n_points)
    zs = rng.uniform(0, 50, n_points)
    shape = (2000, 2000)

    rows = []
    for name, impl in (("compiled", kernels), ("numpy", _kernels_py)):
        if name == "compiled" and kernels.BACKEND != "cython":
            continue

        def run_mean():
            sums = np.zeros(shape)
            counts = np.zeros(shape, dtype=np.int64)
            impl.accum_mean(sums, counts, xs, ys, zs, 0.0, 1000.0, 2.0)

        def run_max():
            maxima = np.full(shape, -np.inf)
            impl.accum_max(maxima, xs, ys, zs, 0.0, 1000.0, 2.0)

        rows.append(("accum_mean", name, f"{n_points / best_of(run_mean) / 1e6:8.1f}"))
        rows.append(("accum_max", name, f"{n_points / best_of(run_max) / 1e6:8.1f}"))
    return rows


def bench_box_mean(grid_side: int, radius: int = 10):
    rng = np.random.default_rng(1)
    values = rng.uniform(0, 100, (grid_side, grid_side))
    valid = (rng.random((grid_side, grid_side)) < 0.8).astype(np.uint8)

    rows = []
    for name, impl in (("compiled", kernels), ("numpy", _kernels_py)):
        if name == "compiled" and kernels.BACKEND != "cython":
            continue
        elapsed = best_of(lambda: impl.box_mean_valid(values, valid, radius))
        mcells = grid_side * grid_side / elapsed / 1e6
        rows.append((f"box_mean r={radius}", name, f"{mcells:8.1f}"))
    return rows


def bench_codec(tmp_dir: str, n_points: int = 200_000):
    import os
    import tempfile

    path = os.path.join(tmp_dir, "bench.laz")
    side = int(np.sqrt(n_points))
    xv, yv = np.meshgrid(np.arange(side) * 0.4, np.arange(side) * 0.4)
    xs, ys = xv.ravel(), yv.ravel()
    zs = np.full(xs.size, 100.0)
    cls = np.full(xs.size, 2, np.uint8)
    gps = year_to_adjusted_gps(2021.0) + np.arange(xs.size) * 1e-4

    start = time.perf_counter()
    write_point_cloud(path, xs, ys, zs, cls, gps)
    enc = xs.size / (time.perf_counter() - start)

    start = time.perf_counter()
    handle = open_cloud(path)
    total = sum(batch.count for batch in stream_batches(handle, 65536))
    dec = total / (time.perf_counter() - start)

    from canopy_forge import lazcodec

    flavor = "compiled" if lazcodec.__file__.endswith(".so") else "pure python"
    return [("laz encode", flavor, f"{enc / 1e6:8.2f}"),
            ("laz decode", flavor, f"{dec / 1e6:8.2f}")]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=4_000_000)
    parser.add_argument("--grid", type=int, default=2000)
    parser.add_argument("--codec-points", type=int, default=200_000)
    args = parser.parse_args()

    print(f"active kernel backend: {kernels.BACKEND}")
    rows = bench_accumulate(args.points)
    rows += bench_box_mean(args.grid)
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        rows += bench_codec(tmp, args.codec_points)

    width = max(len(r[0]) for r in rows) + 2
    print(f"{'kernel':<{width}}{'backend':<12}{'M units/s':>10}")
    for kernel, backend, rate in rows:
        print(f"{kernel:<{width}}{backend:<12}{rate:>10}")


if __name__ == "__main__":
    main()
