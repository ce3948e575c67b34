"""Inference: write one prediction raster per manifest tile, georeferenced
like the tile's canopy raster, so the dataset side's `evaluate` command
consumes them directly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from canopy_forge.errors import CanopyForgeError
from canopy_forge.geotiff import read_geotiff, write_geotiff
from canopy_forge.grid import Grid
from canopy_forge.sampler import Manifest

from .data import load_entry
from .errors import DataError
from .train import load_checkpoint


def predict_to_files(checkpoint_path, manifest_path, out_dir,
                     device: str = "cpu") -> list[Path]:
    """Run the checkpointed model over every manifest tile; returns the
    written ``<tile_id>_pred.tif`` paths."""
    model = load_checkpoint(checkpoint_path, map_location=device)
    model.eval()
    manifest = Manifest.read(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = []
    for entry in sorted(manifest.entries, key=lambda e: e.tile_id):
        images, delta_t, _target, _mask = load_entry(entry)
        with torch.no_grad():
            pred = model(images[None].to(device), delta_t[None].to(device))
        values = pred[0, 0].cpu().numpy().astype(np.float32)

        try:
            chm = read_geotiff(entry.chm_path)
        except CanopyForgeError as exc:
            raise DataError(f"tile {entry.tile_id}: {exc}") from exc
        grid = Grid(chm.transform, values, chm.nodata, chm.crs_code)
        path = out_dir / f"{entry.tile_id}_pred.tif"
        write_geotiff(grid, path)
        written.append(path)
    return written
