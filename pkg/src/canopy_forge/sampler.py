"""Cutting harmonized stacks and canopy grids into 256x256 training samples.

Each sample pairs three timestamped 5-band tiles with one canopy-height
tile, a validity mask, and the per-timestamp year gaps to the canopy
target. Tiles sit on a lattice anchored at the raster origin; ragged
edges are discarded, and tiles whose valid fraction falls below the
threshold are rejected (counted, so users can calibrate the threshold).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (AlignmentMismatch, InsufficientTimestamps,
                     NonCausalTimestamp, ShapeMismatch)
from .geo import BBox
from .geotiff import (KEY_ACQUISITION_YEAR_MEAN, KEY_SOURCE_TILE_COUNT,
                      write_geotiff)
from .grid import Grid, MultiSpectralImage
from .mosaic import Mosaic

TILE_PX = 256


@dataclass(frozen=True)
class Sample:
    inputs: tuple[MultiSpectralImage, MultiSpectralImage, MultiSpectralImage]
    chm: Grid
    mask: np.ndarray
    delta_t: tuple[float, float, float]
    tile_id: str
    origin: BBox


@dataclass
class ManifestEntry:
    tile_id: str
    input_paths: list[str]
    chm_path: str
    delta_t: list[float]
    valid_fraction: float
    department: str
    mean_year: float

    def to_json(self) -> str:
        return json.dumps({
            "tile_id": self.tile_id,
            "input_paths": self.input_paths,
            "chm_path": self.chm_path,
            "delta_t": self.delta_t,
            "valid_fraction": self.valid_fraction,
            "department": self.department,
            "mean_year": self.mean_year,
        }, sort_keys=True)


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    rejected_tiles: int = 0

    @property
    def kept_tiles(self) -> int:
        return len(self.entries)

    @property
    def candidate_tiles(self) -> int:
        return self.kept_tiles + self.rejected_tiles

    @property
    def image_count(self) -> int:
        """Rasters on disk: three input stacks plus one canopy tile each."""
        return 4 * self.kept_tiles

    def write(self, path) -> None:
        """Write JSON-lines sorted by tile id. Raster paths are stored
        relative to the manifest's directory, so the dataset tree is
        relocatable and repeated runs in different directories produce
        byte-identical manifests."""
        path = Path(path)
        base = path.resolve().parent

        def rel(p: str) -> str:
            return os.path.relpath(Path(p).resolve(), base)

        lines = []
        for e in sorted(self.entries, key=lambda e: e.tile_id):
            entry = replace(e, input_paths=[rel(p) for p in e.input_paths],
                            chm_path=rel(e.chm_path))
            lines.append(entry.to_json())
        path.write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        base = path.resolve().parent

        def absolute(p: str) -> str:
            return p if Path(p).is_absolute() else str(base / p)

        entries = []
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            raw = json.loads(line)
            entries.append(ManifestEntry(
                tile_id=raw["tile_id"],
                input_paths=[absolute(p) for p in raw["input_paths"]],
                chm_path=absolute(raw["chm_path"]),
                delta_t=[float(v) for v in raw["delta_t"]],
                valid_fraction=float(raw["valid_fraction"]),
                department=raw["department"],
                mean_year=float(raw["mean_year"]),
            ))
        return cls(entries=entries)


def _generator_for(seed: int, department: str) -> np.random.Generator:
    """Counter-based PRNG keyed by (seed, department): identical draws on
    every platform and run."""
    digest = hashlib.sha256(f"{seed}|{department}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def _rand_below(gen: np.random.Generator, n: int) -> int:
    """Uniform integer in [0, n) by rejection on raw 64-bit words, so the
    result does not depend on numpy's bounded-integer algorithm."""
    limit = (2 ** 64 // n) * n
    while True:
        word = int(gen.integers(0, 2 ** 64, dtype=np.uint64))
        if word < limit:
            return word % n


def select_timestamps(available: list[float], seed: int,
                      department: str = "") -> tuple[float, float, float]:
    """Uniform random 3-subset of the available years, ascending;
    the identity when exactly three are available."""
    years = sorted(available)
    if len(years) < 3:
        raise InsufficientTimestamps(
            f"need 3 acquisition years, have {len(years)}")
    if len(years) == 3:
        return tuple(years)
    gen = _generator_for(seed, department)
    pool = list(years)
    chosen = []
    for _ in range(3):
        index = _rand_below(gen, len(pool))
        chosen.append(pool.pop(index))
    return tuple(sorted(chosen))


def compute_delta_t(t_y: float, selected) -> tuple[float, ...]:
    """Year gaps target-minus-input, order preserved; every input must
    precede the target."""
    gaps = []
    for t in selected:
        if t >= t_y:
            raise NonCausalTimestamp(f"input year {t} not before target {t_y}")
        gaps.append(t_y - t)
    return tuple(gaps)


def make_mask(chm_tile: Grid, input_tiles) -> np.ndarray:
    """Valid pixels: canopy measurement present AND every timestamp carries
    imagery there.

    "No imagery" means R, G, B and NIR are all zero; the index band is
    derived (zero imagery encodes to 128) so it does not count as signal.
    """
    mask = chm_tile.valid_mask()
    for image in input_tiles:
        if image.shape != chm_tile.shape:
            raise ShapeMismatch(f"input {image.shape} vs chm {chm_tile.shape}")
        mask &= image.bands[:4].any(axis=0)
    return mask


def _tile_lattice_id(department: str, tile: Grid, tile_px: int) -> str:
    """Deterministic id from the tile's position on the world lattice of
    tile-sized cells."""
    extent = tile_px * tile.transform.pixel_size_x
    col = math.floor(tile.bbox.min_x / extent + 1e-9)
    row = math.floor(-tile.bbox.max_y / extent + 1e-9)
    return f"{department}_{col}_{row}"


def tile_and_filter(stacks, chm: Mosaic, out_dir, department: str, *,
                    tile_px: int = TILE_PX, min_valid_fraction: float = 0.5,
                    ) -> tuple[list[Sample], Manifest]:
    """Cut aligned stacks + canopy mosaic into non-overlapping tiles,
    write 4 GeoTIFFs per kept tile, and return samples plus the manifest.

    The three stacks must share the mosaic's grid; their acquisition years
    define the sample timestamps (ascending), and the mosaic's mean year is
    the target timestamp.
    """
    if len(stacks) != 3:
        raise ValueError(f"expected 3 stacks, got {len(stacks)}")
    stacks = sorted(stacks, key=lambda s: s.acquisition_year)
    grid = chm.grid
    for stack in stacks:
        if stack.shape != grid.shape or stack.transform != grid.transform:
            raise AlignmentMismatch(
                f"stack grid {stack.transform}/{stack.shape} differs from "
                f"canopy grid {grid.transform}/{grid.shape}")

    delta_t = compute_delta_t(chm.mean_year,
                              [s.acquisition_year for s in stacks])

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    samples: list[Sample] = []
    manifest = Manifest()
    for row0 in range(0, grid.height - tile_px + 1, tile_px):
        for col0 in range(0, grid.width - tile_px + 1, tile_px):
            window = (slice(row0, row0 + tile_px), slice(col0, col0 + tile_px))
            transform = grid.transform.shifted(col0, row0)
            chm_tile = Grid(transform, grid.values[window], grid.nodata,
                            grid.crs_code)
            input_tiles = tuple(
                MultiSpectralImage(transform, s.bands[:, window[0], window[1]],
                                   s.acquisition_year, s.crs_code)
                for s in stacks)
            mask = make_mask(chm_tile, input_tiles)
            valid_fraction = float(mask.mean())
            if valid_fraction < min_valid_fraction:
                manifest.rejected_tiles += 1
                continue

            tile_id = _tile_lattice_id(department, chm_tile, tile_px)
            chm_path = out_dir / f"{tile_id}_chm.tif"
            write_geotiff(chm_tile, chm_path, metadata={
                KEY_ACQUISITION_YEAR_MEAN: repr(float(chm.mean_year)),
                KEY_SOURCE_TILE_COUNT: str(chm.source_count),
            })
            input_paths = []
            for i, tile in enumerate(input_tiles):
                path = out_dir / f"{tile_id}_t{i}.tif"
                write_geotiff(tile, path)
                input_paths.append(str(path))

            samples.append(Sample(input_tiles, chm_tile, mask, delta_t,
                                  tile_id, chm_tile.bbox))
            manifest.entries.append(ManifestEntry(
                tile_id=tile_id,
                input_paths=input_paths,
                chm_path=str(chm_path),
                delta_t=[float(d) for d in delta_t],
                valid_fraction=valid_fraction,
                department=department,
                mean_year=float(chm.mean_year),
            ))

    manifest.entries.sort(key=lambda e: e.tile_id)
    return samples, manifest
