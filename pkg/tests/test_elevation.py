import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canopy_forge import _kernels_py, kernels
from canopy_forge.elevation import (RasterizerConfig, derive_chm,
                                    process_cloud_tile, rasterize,
                                    smooth_square, snap_to_lattice)
from canopy_forge.errors import GridMismatch, NoGroundPoints
from canopy_forge.geo import BBox
from canopy_forge.grid import NODATA
from canopy_forge.lasio import year_to_adjusted_gps
from canopy_forge.pointcloud import PointBatch, write_point_cloud

from conftest import make_grid

CFG = RasterizerConfig(cell_size=1.0, smoothing_window=3.0)


def batch(xs, ys, zs):
    n = len(xs)
    return PointBatch(np.asarray(xs, float), np.asarray(ys, float),
                      np.asarray(zs, float), np.full(n, 2, np.uint8))


class TestRasterize:
    def test_mean_of_two_points(self):
        b = batch([0.2, 0.7], [0.5, 0.5], [100.0, 101.0])
        grid = rasterize([b], BBox(0, 0, 1, 1), CFG, "mean")
        assert grid.values[0, 0] == pytest.approx(100.5)

    def test_min_of_two_points(self):
        b = batch([0.2, 0.7], [0.5, 0.5], [100.0, 101.0])
        grid = rasterize([b], BBox(0, 0, 1, 1), CFG, "min")
        assert grid.values[0, 0] == 100.0

    def test_empty_cell_is_nodata(self):
        b = batch([0.5], [0.5], [100.0])
        grid = rasterize([b], BBox(0, 0, 2, 1), CFG, "mean")
        assert grid.values[0, 0] == 100.0
        assert grid.values[0, 1] == np.float32(NODATA)

    def test_grid_shape_is_ceil(self):
        grid = rasterize([], BBox(0, 0, 2.2, 1.1), CFG, "mean")
        assert (grid.height, grid.width) == (2, 3)

    def test_out_of_extent_points_dropped(self):
        b = batch([-5.0, 0.5], [0.5, 0.5], [1.0, 2.0])
        grid = rasterize([b], BBox(0, 0, 1, 1), CFG, "mean")
        assert grid.values[0, 0] == 2.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 800), st.integers(0, 2**31))
    def test_mean_matches_bruteforce(self, n, seed):
        rng = np.random.default_rng(seed)
        xs = rng.uniform(0, 8, n)
        ys = rng.uniform(0, 6, n)
        zs = rng.uniform(-100, 3000, n)
        box = BBox(0, 0, 8, 6)
        grid = rasterize([batch(xs, ys, zs)], box, CFG, "mean")

        # scalar-loop oracle
        expect = np.full((6, 8), np.nan)
        counts = np.zeros((6, 8))
        sums = np.zeros((6, 8))
        for x, y, z in zip(xs, ys, zs):
            col = int(np.floor(x - 0.0))
            row = int(np.floor(6.0 - y))
            if 0 <= col < 8 and 0 <= row < 6:
                sums[row, col] += z
                counts[row, col] += 1
        with np.errstate(invalid="ignore"):
            expect = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

        valid = grid.valid_mask()
        np.testing.assert_array_equal(valid, counts > 0)
        np.testing.assert_allclose(grid.values[valid], expect[counts > 0],
                                   rtol=1e-6)


class TestSmoothSquare:
    def test_constant_field_fixed_point(self):
        grid = make_grid(np.full((3, 3), 5.0), cell=1.0)
        out = smooth_square(grid, 3.0)
        np.testing.assert_array_equal(out.values, 5.0)

    def test_gap_fill_hand_value(self):
        values = np.array([[10.0, 12.0, 10.0],
                           [12.0, NODATA, 12.0],
                           [10.0, 12.0, 10.0]])
        grid = make_grid(values, cell=1.0)
        out = smooth_square(grid, 3.0)
        # center: mean of the 8 valid neighbors, four 10s and four 12s
        assert out.values[1, 1] == pytest.approx(11.0)

    def test_fully_nodata_stays_nodata(self):
        grid = make_grid(np.full((4, 4), NODATA), cell=1.0)
        out = smooth_square(grid, 3.0)
        assert not out.valid_mask().any()

    def test_window_radius_flooring(self):
        # 10 m window at 0.5 m cells -> radius 10 -> a 21x21 window:
        # a cell 10 cells away from the only valid cell is filled, 11 is not
        values = np.full((1, 23), NODATA, dtype=np.float32)
        values[0, 0] = 7.0
        grid = make_grid(values, cell=0.5)
        out = smooth_square(grid, 10.0)
        assert out.values[0, 10] == pytest.approx(7.0)
        assert out.values[0, 11] == np.float32(NODATA)

    def test_bounded_by_input_extremes(self):
        rng = np.random.default_rng(9)
        values = rng.uniform(50, 80, (40, 40)).astype(np.float32)
        values[rng.random((40, 40)) < 0.3] = NODATA
        grid = make_grid(values, cell=1.0)
        out = smooth_square(grid, 7.0)
        valid_in = values[values != np.float32(NODATA)]
        valid_out = out.values[out.valid_mask()]
        assert valid_out.min() >= valid_in.min() - 1e-6
        assert valid_out.max() <= valid_in.max() + 1e-6

    def test_valid_count_monotone_in_window(self):
        rng = np.random.default_rng(10)
        values = rng.uniform(0, 10, (30, 30)).astype(np.float32)
        values[rng.random((30, 30)) < 0.7] = NODATA
        grid = make_grid(values, cell=1.0)
        counts = [smooth_square(grid, w).valid_mask().sum()
                  for w in (1.0, 3.0, 5.0, 9.0, 15.0)]
        assert all(b >= a for a, b in zip(counts, counts[1:]))

    def test_smooths_valid_cells_not_only_gaps(self):
        values = np.array([[0.0, 10.0, 0.0]])
        grid = make_grid(values, cell=1.0)
        out = smooth_square(grid, 3.0)
        assert out.values[0, 1] == pytest.approx(10.0 / 3.0)


class TestKernelBackends:
    """Both kernel implementations must agree bit-for-bit on results."""

    def test_box_mean_agreement(self):
        rng = np.random.default_rng(4)
        values = rng.uniform(-5, 5, (57, 43))
        valid = (rng.random((57, 43)) < 0.6).astype(np.uint8)
        for radius in (0, 1, 3, 10):
            m_py, c_py = _kernels_py.box_mean_valid(values, valid, radius)
            m_k, c_k = kernels.box_mean_valid(
                np.ascontiguousarray(values), np.ascontiguousarray(valid), radius)
            np.testing.assert_array_equal(c_py, c_k)
            np.testing.assert_allclose(m_py, m_k, rtol=1e-12, atol=1e-12)

    def test_accumulators_agreement(self):
        rng = np.random.default_rng(6)
        n = 5000
        # include out-of-extent points: both backends must drop them
        xs = np.ascontiguousarray(rng.uniform(-5, 35, n))
        ys = np.ascontiguousarray(rng.uniform(-5, 25, n))
        zs = np.ascontiguousarray(rng.uniform(-100, 100, n))

        for impl in (_kernels_py, kernels):
            sums = np.zeros((20, 30))
            counts = np.zeros((20, 30), dtype=np.int64)
            maxima = np.full((20, 30), -np.inf)
            minima = np.full((20, 30), np.inf)
            impl.accum_mean(sums, counts, xs, ys, zs, 0.0, 20.0, 1.0)
            impl.accum_max(maxima, xs, ys, zs, 0.0, 20.0, 1.0)
            impl.accum_min(minima, xs, ys, zs, 0.0, 20.0, 1.0)
            if impl is _kernels_py:
                ref = (sums.copy(), counts.copy(), maxima.copy(), minima.copy())
            else:
                np.testing.assert_allclose(sums, ref[0], rtol=1e-12)
                np.testing.assert_array_equal(counts, ref[1])
                np.testing.assert_array_equal(maxima, ref[2])
                np.testing.assert_array_equal(minima, ref[3])


class TestDeriveChm:
    def test_subtraction(self):
        dsm = make_grid([[12.0]])
        dtm = make_grid([[2.0]])
        assert derive_chm(dsm, dtm).values[0, 0] == 10.0

    def test_clamped_at_zero(self):
        dsm = make_grid([[1.0]])
        dtm = make_grid([[2.0]])
        assert derive_chm(dsm, dtm).values[0, 0] == 0.0

    def test_nodata_propagates(self):
        dsm = make_grid([[NODATA, 5.0]])
        dtm = make_grid([[2.0, NODATA]])
        out = derive_chm(dsm, dtm)
        assert not out.valid_mask().any()

    def test_invalid_mask_is_union(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 50, (10, 10)).astype(np.float32)
        b = rng.uniform(0, 50, (10, 10)).astype(np.float32)
        a[rng.random((10, 10)) < 0.3] = NODATA
        b[rng.random((10, 10)) < 0.3] = NODATA
        dsm, dtm = make_grid(a), make_grid(b)
        out = derive_chm(dsm, dtm)
        np.testing.assert_array_equal(
            ~out.valid_mask(), ~dsm.valid_mask() | ~dtm.valid_mask())
        assert (out.values[out.valid_mask()] >= 0).all()

    def test_shape_mismatch(self):
        with pytest.raises(GridMismatch):
            derive_chm(make_grid([[1.0]]), make_grid([[1.0, 2.0]]))

    def test_transform_mismatch(self):
        with pytest.raises(GridMismatch):
            derive_chm(make_grid([[1.0]], origin=(0, 0)),
                       make_grid([[1.0]], origin=(5, 5)))


class TestSnapToLattice:
    def test_grows_outward(self):
        box = snap_to_lattice(BBox(0.3, 0.7, 9.9, 10.2), 0.5)
        assert box == BBox(0.0, 0.5, 10.0, 10.5)

    def test_already_aligned_unchanged(self):
        box = BBox(2.0, 3.0, 6.5, 8.0)
        assert snap_to_lattice(box, 0.5) == box


class TestProcessCloudTile:
    def write_scene(self, path, ground=True, vegetation=True, year=2021.0):
        xs, ys, zs, cls = [], [], [], []
        if ground:
            gx, gy = np.meshgrid(np.arange(0.25, 20, 0.25),
                                 np.arange(0.25, 20, 0.25))
            xs.append(gx.ravel())
            ys.append(gy.ravel())
            zs.append(np.full(gx.size, 100.0))
            cls.append(np.full(gx.size, 2, np.uint8))
        if vegetation:
            vx, vy = np.meshgrid(np.arange(5.125, 10, 0.25),
                                 np.arange(5.125, 10, 0.25))
            xs.append(vx.ravel())
            ys.append(vy.ravel())
            zs.append(np.full(vx.size, 110.0))
            cls.append(np.full(vx.size, 5, np.uint8))
        xs = np.concatenate(xs) if xs else np.array([])
        ys = np.concatenate(ys) if ys else np.array([])
        zs = np.concatenate(zs) if zs else np.array([])
        cls = np.concatenate(cls) if cls else np.array([], dtype=np.uint8)
        gps = np.full(xs.size, year_to_adjusted_gps(year))
        write_point_cloud(path, xs, ys, zs, cls, gps)

    def test_synthetic_scene_height(self, tmp_path):
        path = tmp_path / "scene.laz"
        self.write_scene(path)
        cfg = RasterizerConfig(cell_size=0.5, smoothing_window=10.0)
        chm, year = process_cloud_tile(path, cfg)
        assert year == pytest.approx(2021.0, abs=0.01)

        # canopy block [5,10)x[5,10) -> cells 10..19; stay off the border
        block = chm.values[chm.height - 19:chm.height - 11, 11:19]
        np.testing.assert_allclose(block, 10.0, atol=1e-4)
        # no vegetation returns outside the block -> nodata there
        assert chm.values[0, 0] == np.float32(NODATA)

    def test_ground_only_all_nodata(self, tmp_path):
        path = tmp_path / "g.laz"
        self.write_scene(path, vegetation=False)
        cfg = RasterizerConfig(cell_size=0.5, smoothing_window=10.0)
        chm, _ = process_cloud_tile(path, cfg)
        assert not chm.valid_mask().any()

    def test_no_ground_raises(self, tmp_path):
        path = tmp_path / "v.laz"
        self.write_scene(path, ground=False)
        cfg = RasterizerConfig(cell_size=0.5, smoothing_window=10.0)
        with pytest.raises(NoGroundPoints):
            process_cloud_tile(path, cfg)

    def test_year_override_wins(self, tmp_path):
        path = tmp_path / "scene.laz"
        self.write_scene(path, year=2021.0)
        cfg = RasterizerConfig(cell_size=0.5, smoothing_window=10.0)
        _, year = process_cloud_tile(path, cfg, year_override=2019.5)
        assert year == 2019.5


class TestConfigValidation:
    def test_negative_cell(self):
        with pytest.raises(ValueError):
            RasterizerConfig(cell_size=-1.0)

    def test_window_smaller_than_cell(self):
        with pytest.raises(ValueError):
            RasterizerConfig(cell_size=1.0, smoothing_window=0.5)

    def test_bad_statistic(self):
        with pytest.raises(ValueError):
            RasterizerConfig(dtm_statistic="median")
