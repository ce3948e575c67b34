import pytest
from hypothesis import given
from hypothesis import strategies as st

from canopy_forge.geo import (AffineTransform, BBox, bbox_contains,
                              pixel_to_world, world_to_pixel)


class TestWorldToPixel:
    def test_origin_maps_to_zero(self):
        t = AffineTransform(0.0, 1000.0, 0.5, -0.5)
        assert world_to_pixel(t, 0.0, 1000.0) == (0, 0)

    def test_interior_point(self):
        t = AffineTransform(0.0, 1000.0, 0.5, -0.5)
        # floor((1.2-0)/0.5)=2, floor((999-1000)/-0.5)=2
        assert world_to_pixel(t, 1.2, 999.0) == (2, 2)

    def test_negative_index_allowed(self):
        t = AffineTransform(100.0, 500.0, 0.5, -0.5)
        assert world_to_pixel(t, 99.9, 500.0) == (-1, 0)

    def test_shared_edge_goes_to_higher_index(self):
        t = AffineTransform(0.0, 10.0, 0.5, -0.5)
        assert world_to_pixel(t, 1.0, 10.0) == (2, 0)


@given(
    origin_x=st.floats(-1e6, 1e6),
    origin_y=st.floats(-1e6, 1e6),
    cell=st.floats(0.05, 10.0),
    col=st.integers(0, 5000),
    row=st.integers(0, 5000),
)
def test_pixel_world_round_trip(origin_x, origin_y, cell, col, row):
    t = AffineTransform(origin_x, origin_y, cell, -cell)
    x, y = pixel_to_world(t, col, row)
    assert world_to_pixel(t, x, y) == (col, row)


class TestBBoxContains:
    def test_shared_corner(self):
        assert bbox_contains(BBox(0, 0, 5000, 5000), BBox(0, 0, 1000, 1000))

    def test_protruding_east(self):
        assert not bbox_contains(BBox(0, 0, 5000, 5000), BBox(4500, 0, 5500, 1000))

    def test_identity(self):
        box = BBox(10, 20, 30, 40)
        assert bbox_contains(box, box)


_boxes = st.builds(
    lambda x, y, w, h: BBox(x, y, x + w, y + h),
    st.floats(-1e5, 1e5), st.floats(-1e5, 1e5),
    st.floats(0.1, 1e4), st.floats(0.1, 1e4),
)


@given(_boxes)
def test_contains_reflexive(box):
    assert bbox_contains(box, box)


@given(_boxes, _boxes)
def test_contains_antisymmetric_up_to_equality(a, b):
    if bbox_contains(a, b) and bbox_contains(b, a):
        assert a == b


class TestValidation:
    def test_degenerate_bbox_rejected(self):
        with pytest.raises(ValueError):
            BBox(0, 0, 0, 10)

    def test_zero_pixel_size_rejected(self):
        with pytest.raises(ValueError):
            AffineTransform(0, 0, 0.5, 0.0)

    def test_negative_x_size_rejected(self):
        with pytest.raises(ValueError):
            AffineTransform(0, 0, -0.5, -0.5)

    def test_transform_bbox(self):
        t = AffineTransform(100.0, 200.0, 0.5, -0.5)
        assert t.bbox(10, 20) == BBox(100.0, 190.0, 105.0, 200.0)

    def test_shifted(self):
        t = AffineTransform(100.0, 200.0, 0.5, -0.5)
        assert t.shifted(4, 2) == AffineTransform(102.0, 199.0, 0.5, -0.5)
