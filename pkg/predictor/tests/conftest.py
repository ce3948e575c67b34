"""Synthetic 4-sample dataset shared across the predictor tests: targets
correlated with the input bands so a small model can actually fit them."""

from __future__ import annotations

import numpy as np
import pytest

from canopy_forge.geo import AffineTransform
from canopy_forge.grid import NODATA, Grid, MultiSpectralImage
from canopy_forge.harmonize import compute_ndvi_u8
from canopy_forge.mosaic import Mosaic
from canopy_forge.sampler import tile_and_filter

SIZE = 128  # at 0.5 m cells, tiled into four 64 px samples
CELL = 0.5
YEARS = (2016.0, 2018.0, 2020.0)
MEAN_YEAR = 2021.5


def build_dataset(root, seed=0):
    """Write four 64x64 samples + manifest under root; returns the path."""
    rng = np.random.default_rng(seed)
    transform = AffineTransform(0.0, SIZE * CELL, CELL, -CELL)

    rr, cc = np.meshgrid(np.arange(SIZE), np.arange(SIZE), indexing="ij")
    height = 6.0 + 4.0 * np.sin(rr / 9.0) * np.cos(cc / 7.0) \
        + rng.normal(0, 0.3, (SIZE, SIZE))
    height = np.clip(height, 0.0, None).astype(np.float32)
    height[(rr < 6) & (cc < 6)] = NODATA  # a corner without canopy returns
    chm = Grid(transform, height)
    mosaic = Mosaic(chm, MEAN_YEAR, 2)

    stacks = []
    for i, year in enumerate(YEARS):
        grown = np.where(height == np.float32(NODATA), 0.0, height) \
            * (0.8 + 0.1 * i)
        nir = np.clip(100 + 10 * grown + rng.normal(0, 2, (SIZE, SIZE)),
                      0, 255).astype(np.uint8)
        red = np.clip(90 - 5 * grown + rng.normal(0, 2, (SIZE, SIZE)),
                      0, 255).astype(np.uint8)
        green = np.clip(70 + 3 * grown, 0, 255).astype(np.uint8)
        blue = np.full((SIZE, SIZE), 60, dtype=np.uint8)
        ndvi = compute_ndvi_u8(nir, red)
        stacks.append(MultiSpectralImage(
            transform, np.stack([red, green, blue, nir, ndvi]), year))

    _, manifest = tile_and_filter(stacks, mosaic, root / "samples", "T01",
                                  tile_px=64, min_valid_fraction=0.5)
    manifest_path = root / "manifest.jsonl"
    manifest.write(manifest_path)
    assert manifest.kept_tiles == 4
    return manifest_path


@pytest.fixture(scope="session")
def dataset_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    return build_dataset(root)


@pytest.fixture()
def tiny_model_config():
    from canopy_predictor.model import ModelConfig

    return ModelConfig(stem_channels=8, fused_channels=16, unet_base=16,
                       unet_depth=2)
