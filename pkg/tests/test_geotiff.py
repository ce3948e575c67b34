import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from canopy_forge.errors import IoFailure, MalformedFile, UnsupportedLayout
from canopy_forge.geo import AffineTransform
from canopy_forge.geotiff import (read_geotiff, read_metadata, write_geotiff,
                                  write_rotated_fixture)
from canopy_forge.grid import NODATA, Grid, MultiSpectralImage, OpticalImage

T = AffineTransform(650000.0, 6600000.0, 0.5, -0.5)


class TestGridRoundTrip:
    def test_small_grid_with_nodata(self, tmp_path):
        values = np.array([[1.5, -9999.0, 3.25],
                           [0.0, 2.125, -9999.0],
                           [7.0, 8.0, 9.0]], dtype=np.float32)
        grid = Grid(T, values)
        path = tmp_path / "g.tif"
        write_geotiff(grid, path)
        back = read_geotiff(path)
        assert isinstance(back, Grid)
        np.testing.assert_array_equal(back.values, grid.values)
        assert back.transform == grid.transform
        assert back.nodata == grid.nodata
        assert back.crs_code == grid.crs_code

    def test_all_zeros(self, tmp_path):
        grid = Grid(T, np.zeros((4, 4), dtype=np.float32))
        path = tmp_path / "z.tif"
        write_geotiff(grid, path)
        np.testing.assert_array_equal(read_geotiff(path).values, 0.0)

    def test_larger_than_one_tile(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.uniform(-50, 50, (300, 517)).astype(np.float32)
        grid = Grid(T, values)
        path = tmp_path / "big.tif"
        write_geotiff(grid, path)
        np.testing.assert_array_equal(read_geotiff(path).values, grid.values)

    def test_metadata_round_trip(self, tmp_path):
        grid = Grid(T, np.ones((2, 2), dtype=np.float32))
        path = tmp_path / "m.tif"
        write_geotiff(grid, path, metadata={"ACQUISITION_YEAR_MEAN": "2020.0",
                                            "SOURCE_TILE_COUNT": "7"})
        meta = read_metadata(path)
        assert meta["ACQUISITION_YEAR_MEAN"] == "2020.0"
        assert meta["SOURCE_TILE_COUNT"] == "7"

    def test_nan_values_normalize_to_nodata(self, tmp_path):
        values = np.array([[np.nan, 1.0]], dtype=np.float32)
        grid = Grid(T, values)
        assert grid.values[0, 0] == np.float32(NODATA)
        path = tmp_path / "n.tif"
        write_geotiff(grid, path)
        assert read_geotiff(path).values[0, 0] == np.float32(NODATA)


@settings(max_examples=25, deadline=None)
@given(values=hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2,
                                                      min_side=1, max_side=40),
                         elements=st.floats(-1e5, 1e5, width=32)),
       nodata_fraction=st.floats(0, 1))
def test_round_trip_property(tmp_path_factory, values, nodata_fraction):
    rng = np.random.default_rng(1)
    values = values.copy()
    values[rng.random(values.shape) < nodata_fraction] = NODATA
    grid = Grid(T, values)
    path = tmp_path_factory.mktemp("rt") / "g.tif"
    write_geotiff(grid, path)
    back = read_geotiff(path)
    np.testing.assert_array_equal(back.values, grid.values)
    assert back.transform == grid.transform


class TestImagery:
    def test_five_band_with_year(self, tmp_path):
        rng = np.random.default_rng(2)
        image = MultiSpectralImage(T, rng.integers(0, 256, (5, 33, 47), dtype=np.uint8),
                                   2019.0)
        path = tmp_path / "msi.tif"
        write_geotiff(image, path)
        back = read_geotiff(path)
        assert isinstance(back, MultiSpectralImage)
        np.testing.assert_array_equal(back.bands, image.bands)
        assert back.acquisition_year == 2019.0

    def test_three_band(self, tmp_path):
        rng = np.random.default_rng(3)
        image = OpticalImage(T, rng.integers(0, 256, (3, 10, 10), dtype=np.uint8),
                             2016.0)
        path = tmp_path / "rgb.tif"
        write_geotiff(image, path)
        back = read_geotiff(path)
        assert isinstance(back, OpticalImage)
        np.testing.assert_array_equal(back.bands, image.bands)


class TestErrors:
    def test_rotated_transform_rejected(self, tmp_path):
        path = tmp_path / "rot.tif"
        write_rotated_fixture(path)
        with pytest.raises(UnsupportedLayout):
            read_geotiff(path)

    def test_unwritable_directory(self, tmp_path):
        grid = Grid(T, np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(IoFailure):
            write_geotiff(grid, tmp_path / "missing_dir" / "g.tif")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "junk.tif"
        path.write_bytes(b"definitely not a tiff")
        with pytest.raises(MalformedFile):
            read_geotiff(path)

    def test_truncated_file(self, tmp_path):
        grid = Grid(T, np.ones((64, 64), dtype=np.float32))
        path = tmp_path / "t.tif"
        write_geotiff(grid, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 3])
        with pytest.raises(MalformedFile):
            read_geotiff(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoFailure):
            read_geotiff(tmp_path / "absent.tif")

    def test_nan_nodata_tag_collapses_to_sentinel(self, tmp_path):
        # hand-crafted strip file with GDAL_NODATA "nan" and a NaN cell
        import numpy as np

        from canopy_forge import _tiff as t
        from canopy_forge.geotiff import _deflate

        arr = np.array([[np.nan, 5.0]], dtype=np.float32)[:, :, None]
        writer = t.TiffFileWriter()
        blob = _deflate(arr.tobytes())
        offset = writer.add_block(blob)
        for tag, tid, vals in [
            (t.IMAGE_WIDTH, 4, [2]), (t.IMAGE_LENGTH, 4, [1]),
            (t.BITS_PER_SAMPLE, 3, [32]), (t.COMPRESSION, 3, [8]),
            (t.PHOTOMETRIC, 3, [1]), (t.SAMPLES_PER_PIXEL, 3, [1]),
            (t.STRIP_OFFSETS, 4, [offset]), (t.ROWS_PER_STRIP, 4, [1]),
            (t.STRIP_BYTE_COUNTS, 4, [len(blob)]),
            (t.SAMPLE_FORMAT, 3, [3]),
            (t.MODEL_PIXEL_SCALE, 12, [0.5, 0.5, 0.0]),
            (t.MODEL_TIEPOINT, 12, [0.0, 0.0, 0.0, 10.0, 20.0, 0.0]),
        ]:
            writer.add_field(tag, tid, vals)
        writer.add_field(t.GDAL_NODATA, 2, "nan")
        path = tmp_path / "nan.tif"
        path.write_bytes(writer.tobytes())

        grid = read_geotiff(path)
        assert grid.nodata == -9999.0
        assert not grid.valid_mask()[0, 0]
        assert grid.values[0, 1] == 5.0
