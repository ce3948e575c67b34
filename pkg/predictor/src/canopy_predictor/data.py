"""Dataset over sample manifests written by the dataset pipeline.

Each item loads the three 5-band input tiles (scaled to [0, 1] floats),
the canopy-height target, the validity mask (canopy present and imagery
nonzero, recomputed from the rasters exactly as at sampling time), and
the three year gaps.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch.utils.data import Dataset

from canopy_forge.errors import CanopyForgeError
from canopy_forge.geotiff import read_geotiff
from canopy_forge.sampler import Manifest, ManifestEntry, make_mask

from .errors import DataError


def load_entry(entry: ManifestEntry):
    """(images (3,5,H,W) float32, delta_t (3,), target (H,W), mask (H,W))."""
    try:
        chm = read_geotiff(entry.chm_path)
        inputs = [read_geotiff(p) for p in entry.input_paths]
    except (CanopyForgeError, OSError) as exc:
        raise DataError(f"tile {entry.tile_id}: {exc}") from exc

    mask = make_mask(chm, inputs)
    images = np.stack([img.bands for img in inputs]).astype(np.float32) / 255.0
    target = np.where(chm.valid_mask(), chm.values, 0.0).astype(np.float32)
    delta_t = np.asarray(entry.delta_t, dtype=np.float32)
    return (torch.from_numpy(images), torch.from_numpy(delta_t),
            torch.from_numpy(target), torch.from_numpy(mask.astype(np.float32)))


class SampleDataset(Dataset):
    """Map-style dataset over a manifest; unreadable tiles raise DataError
    so the training loop can log and skip them."""

    def __init__(self, manifest_path):
        self.manifest_path = Path(manifest_path)
        self.entries = Manifest.read(self.manifest_path).entries

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int):
        return load_entry(self.entries[index])
