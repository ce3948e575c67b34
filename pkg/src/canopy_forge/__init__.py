"""canopy-forge: classified LiDAR + multi-temporal orthophotos in,
spatially aligned canopy-height training samples out.

The pipeline rasterizes ground/vegetation returns into terrain and
surface models, smooths the terrain with a square moving filter, derives
canopy height, mosaics tiles most-recent-first onto each optical
footprint, stacks R/G/B/NIR/NDVI imagery onto the canopy grid, and cuts
everything into 256x256 samples with validity masks and year gaps.
Masked evaluation metrics (weighted/unweighted MSE, tree-pixel MAE,
confusion rendering) live in :mod:`canopy_forge.metrics`.
"""

__version__ = "0.1.0"

from .elevation import (RasterizerConfig, derive_chm, process_cloud_tile,
                        rasterize, smooth_square)
from .errors import CanopyForgeError
from .evaluate import evaluate_manifest
from .geo import AffineTransform, BBox, bbox_contains, pixel_to_world, world_to_pixel
from .geotiff import read_geotiff, read_metadata, write_geotiff
from .grid import Grid, MultiSpectralImage, OpticalImage
from .harmonize import OpticalPair, compute_ndvi_u8, resample_to, stack_bands
from .ingest import MatchSet, TileRecord, build_index, fetch, match_tiles
from .metrics import (Confusion, EvalReport, LossConfig, confusion_map,
                      masked_mae, masked_mse, render_confusion_png,
                      weighted_masked_mse)
from .mosaic import DatedGrid, Mosaic, crop_to, merge
from .pipeline import PipelineConfig, run_pipeline, validate_config
from .pointcloud import (ClassFilter, PointBatch, open_cloud, split_by_class,
                         stream_batches, write_point_cloud)
from .sampler import (Manifest, Sample, compute_delta_t, make_mask,
                      select_timestamps, tile_and_filter)

__all__ = [name for name in dir() if not name.startswith("_")]
