"""End-to-end orchestration: index -> fetch -> chm -> mosaic -> harmonize
-> tile, driven by one YAML config, with per-stage completion markers so an
interrupted run resumes where it stopped.

Stages isolate per-tile failures: a corrupt input is logged and skipped,
the stage finishes the remaining tiles, and only then surfaces a
StageFailure (the stage marker stays absent, so a rerun retries just the
failed work).
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .elevation import RasterizerConfig, process_cloud_tile
from .errors import (CanopyForgeError, ConfigError, InsufficientTimestamps,
                     StageFailure)
from .geo import BBox
from .geotiff import (KEY_ACQUISITION_YEAR_MEAN, KEY_SOURCE_TILE_COUNT,
                      read_geotiff, read_metadata, write_geotiff)
from .harmonize import OpticalPair, resample_to, stack_bands
from .ingest import TileRecord, build_index, fetch, local_fetch_path, match_tiles
from .mosaic import DatedGrid, Mosaic, merge
from .pointcloud import ClassFilter
from .sampler import Manifest, select_timestamps, tile_and_filter

logger = logging.getLogger("canopy_forge")

STAGES = ("index", "fetch", "chm", "mosaic", "harmonize", "tile")


@dataclass(frozen=True)
class PipelineConfig:
    catalog: str
    work_dir: str
    cell_size: float = 0.5
    smoothing_window: float = 10.0
    min_valid_fraction: float = 0.5
    seed: int = 42
    tile_px: int = 256
    max_parallel: int = 4
    retries: int = 2
    workers: int = 0  # 0 -> os.cpu_count()
    departments: tuple[str, ...] = ()
    ground_classes: tuple[int, ...] = (2,)
    vegetation_classes: tuple[int, ...] = (3, 4, 5)
    k: float = 10.0
    theta: float = 0.5

    def class_filter(self) -> ClassFilter:
        return ClassFilter(frozenset(self.ground_classes),
                           frozenset(self.vegetation_classes))

    def rasterizer(self) -> RasterizerConfig:
        return RasterizerConfig(cell_size=self.cell_size,
                                smoothing_window=self.smoothing_window,
                                class_filter=self.class_filter())


_REQUIRED = ("catalog", "work_dir")
_POSITIVE = ("cell_size", "smoothing_window", "tile_px", "max_parallel")
_NON_NEGATIVE = ("min_valid_fraction", "retries", "workers", "k", "theta")


def config_from_mapping(raw: dict) -> PipelineConfig:
    known = {f.name for f in PipelineConfig.__dataclass_fields__.values()}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown key")
    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(key, "required")
    values = dict(raw)
    for key in ("departments", "ground_classes", "vegetation_classes"):
        if key in values:
            if not isinstance(values[key], (list, tuple)):
                raise ConfigError(key, "expected a list")
            values[key] = tuple(values[key])
    try:
        cfg = PipelineConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError("<config>", str(exc)) from exc
    for key in _POSITIVE:
        if getattr(cfg, key) <= 0:
            raise ConfigError(key, "must be positive")
    for key in _NON_NEGATIVE:
        if getattr(cfg, key) < 0:
            raise ConfigError(key, "must not be negative")
    if cfg.min_valid_fraction > 1:
        raise ConfigError("min_valid_fraction", "must be at most 1")
    if cfg.smoothing_window < cfg.cell_size:
        raise ConfigError("smoothing_window", "must be at least one cell")
    if set(cfg.ground_classes) & set(cfg.vegetation_classes):
        raise ConfigError("vegetation_classes", "overlaps ground_classes")
    return cfg


def validate_config(path) -> PipelineConfig:
    """Parse and validate a YAML config file, applying defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file does not exist")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"bad YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return config_from_mapping(raw)


def _log(stage: str, event: str, **fields):
    logger.info(json.dumps({"stage": stage, "event": event, **fields},
                           sort_keys=True))


# --- stage state -------------------------------------------------------------


class _Run:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.work = Path(config.work_dir)
        self.markers = self.work / "markers"
        self.summary: dict[str, dict] = {}

    def marker_path(self, stage: str) -> Path:
        return self.markers / f"{stage}.json"

    def is_done(self, stage: str) -> bool:
        return self.marker_path(stage).exists()

    def mark_done(self, stage: str, info: dict):
        self.markers.mkdir(parents=True, exist_ok=True)
        self.marker_path(stage).write_text(json.dumps(info, sort_keys=True))

    def load_marker(self, stage: str) -> dict:
        return json.loads(self.marker_path(stage).read_text())


@dataclass
class _Site:
    """One optical footprint within a department: the unit that yields a
    canopy mosaic and a set of samples."""

    department: str
    bbox: BBox
    rgb_by_year: dict[float, TileRecord] = field(default_factory=dict)
    nirrg_by_year: dict[float, TileRecord] = field(default_factory=dict)
    clouds: list[TileRecord] = field(default_factory=list)

    @property
    def site_id(self) -> str:
        return f"{self.department}_{round(self.bbox.min_x)}_{round(self.bbox.min_y)}"

    @property
    def paired_years(self) -> list[float]:
        return sorted(set(self.rgb_by_year) & set(self.nirrg_by_year))


def _group_sites(records: list[TileRecord], departments) -> list[_Site]:
    sites: dict[tuple, _Site] = {}
    selected = set(departments) if departments else None
    optical = [r for r in records if r.kind in ("rgb", "nirrg")]
    clouds = [r for r in records if r.kind == "pointcloud"]
    for record in optical:
        if selected and record.department not in selected:
            continue
        key = (record.department, round(record.bbox.min_x, 3),
               round(record.bbox.min_y, 3), round(record.bbox.max_x, 3),
               round(record.bbox.max_y, 3))
        site = sites.setdefault(key, _Site(record.department, record.bbox))
        target = site.rgb_by_year if record.kind == "rgb" else site.nirrg_by_year
        target[record.acquisition_year] = record

    # cloud tiles attach to every site that fully contains them
    for site in sites.values():
        rgb_any = next(iter(site.rgb_by_year.values()), None)
        if rgb_any is None:
            continue
        matches = match_tiles([rgb_any], clouds)
        if matches:
            site.clouds = list(matches[0].pointcloud_tiles)
    return sorted(sites.values(), key=lambda s: s.site_id)


# --- stages -------------------------------------------------------------------


def run_pipeline(config: PipelineConfig) -> dict:
    """Execute all stages in order, skipping those whose marker exists.

    Returns {stage: summary} with counts, rejections and wall time; raises
    StageFailure on the first stage that could not complete.
    """
    run = _Run(config)
    if not Path(config.catalog).exists():
        raise StageFailure("index", FileNotFoundError(config.catalog))
    run.work.mkdir(parents=True, exist_ok=True)

    stage_fns = {
        "index": _stage_index,
        "fetch": _stage_fetch,
        "chm": _stage_chm,
        "mosaic": _stage_mosaic,
        "harmonize": _stage_harmonize,
        "tile": _stage_tile,
    }
    for stage in STAGES:
        started = time.monotonic()
        if run.is_done(stage):
            info = run.load_marker(stage)
            info["skipped"] = True
            run.summary[stage] = info
            _log(stage, "skipped")
            continue
        _log(stage, "start")
        try:
            info = stage_fns[stage](run)
        except StageFailure:
            raise
        except CanopyForgeError as exc:
            raise StageFailure(stage, exc) from exc
        info["seconds"] = round(time.monotonic() - started, 3)
        info["skipped"] = False
        run.mark_done(stage, info)
        run.summary[stage] = info
        _log(stage, "done", **{k: v for k, v in info.items()
                               if isinstance(v, (int, float, str))})
    return run.summary


def _stage_index(run: _Run) -> dict:
    records = build_index(run.config.catalog)
    index_path = run.work / "index.jsonl"
    lines = []
    for r in records:
        lines.append(json.dumps({
            "id": r.id, "kind": r.kind, "minx": r.bbox.min_x, "miny": r.bbox.min_y,
            "maxx": r.bbox.max_x, "maxy": r.bbox.max_y, "year": r.acquisition_year,
            "url": r.url_or_path, "department": r.department}, sort_keys=True))
    index_path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return {"records": len(records)}


def _load_index(run: _Run) -> list[TileRecord]:
    return build_index(run.work / "index.jsonl")


def _stage_fetch(run: _Run) -> dict:
    records = _load_index(run)
    dest = run.work / "tiles"
    paths = fetch(records, dest, run.config.max_parallel, run.config.retries)
    return {"fetched": len(paths)}


def _fetched_path(run: _Run, record: TileRecord) -> Path:
    return local_fetch_path(run.work / "tiles", record)


def _stage_chm(run: _Run) -> dict:
    config = run.config
    records = _load_index(run)
    sites = _group_sites(records, config.departments)
    wanted: dict[str, TileRecord] = {}
    for site in sites:
        for cloud in site.clouds:
            wanted[cloud.id] = cloud

    out_dir = run.work / "chm"
    out_dir.mkdir(parents=True, exist_ok=True)
    rasterizer = config.rasterizer()

    def one_tile(cloud_id: str) -> None:
        record = wanted[cloud_id]
        out_path = out_dir / f"{cloud_id}.tif"
        if out_path.exists():
            return
        chm, year = process_cloud_tile(_fetched_path(run, record), rasterizer)
        # catalog year takes precedence over GPS-derived time
        year = record.acquisition_year or year
        write_geotiff(chm, out_path,
                      metadata={"ACQUISITION_YEAR": repr(float(year))})

    produced = 0
    errors: list[tuple[str, Exception]] = []
    workers = config.workers or None  # None -> executor default (cpu count)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {cid: pool.submit(one_tile, cid) for cid in sorted(wanted)}
        for cloud_id in sorted(wanted):
            try:
                futures[cloud_id].result()
                produced += 1
                _log("chm", "tile_done", tile=cloud_id)
            except CanopyForgeError as exc:
                errors.append((cloud_id, exc))
                _log("chm", "tile_failed", tile=cloud_id, error=str(exc))
    if errors:
        raise StageFailure("chm", errors[0][1])
    return {"tiles": produced}


def _stage_mosaic(run: _Run) -> dict:
    config = run.config
    records = _load_index(run)
    sites = _group_sites(records, config.departments)
    out_dir = run.work / "mosaic"
    out_dir.mkdir(parents=True, exist_ok=True)
    produced = 0
    skipped = 0
    errors = []
    for site in sites:
        if not site.clouds:
            skipped += 1
            _log("mosaic", "site_skipped", site=site.site_id, reason="no clouds")
            continue
        out_path = out_dir / f"{site.site_id}.tif"
        if out_path.exists():
            produced += 1
            continue
        try:
            tiles = []
            for cloud in sorted(site.clouds, key=lambda c: c.id):
                grid = read_geotiff(run.work / "chm" / f"{cloud.id}.tif")
                meta = read_metadata(run.work / "chm" / f"{cloud.id}.tif")
                year = float(meta["ACQUISITION_YEAR"])
                tiles.append(DatedGrid(grid, year, source_id=cloud.id))
            cell = config.cell_size
            width = math.ceil(site.bbox.width / cell - 1e-9)
            height = math.ceil(site.bbox.height / cell - 1e-9)
            target = tiles[0].grid.transform
            target = replace(target, origin_x=site.bbox.min_x,
                             origin_y=site.bbox.max_y)
            mosaic = merge(tiles, target, width, height)
            write_geotiff(mosaic.grid, out_path, metadata={
                KEY_ACQUISITION_YEAR_MEAN: repr(float(mosaic.mean_year)),
                KEY_SOURCE_TILE_COUNT: str(mosaic.source_count),
            })
            produced += 1
            _log("mosaic", "site_done", site=site.site_id,
                 mean_year=mosaic.mean_year, sources=mosaic.source_count)
        except CanopyForgeError as exc:
            errors.append((site.site_id, exc))
            _log("mosaic", "site_failed", site=site.site_id, error=str(exc))
    if errors:
        raise StageFailure("mosaic", errors[0][1])
    return {"sites": produced, "without_clouds": skipped}


def _site_years(run: _Run, site: _Site) -> tuple[float, list[float]] | None:
    """(target year, three selected input years) for a site, or None when
    the site cannot yield samples."""
    mosaic_path = run.work / "mosaic" / f"{site.site_id}.tif"
    if not mosaic_path.exists():
        return None
    meta = read_metadata(mosaic_path)
    t_y = float(meta[KEY_ACQUISITION_YEAR_MEAN])
    usable = [y for y in site.paired_years if y < t_y]
    selected = select_timestamps(usable, run.config.seed, site.department)
    return t_y, list(selected)


def _stage_harmonize(run: _Run) -> dict:
    config = run.config
    records = _load_index(run)
    sites = _group_sites(records, config.departments)
    out_dir = run.work / "stacks"
    out_dir.mkdir(parents=True, exist_ok=True)
    produced = 0
    skipped = 0
    errors = []
    for site in sites:
        try:
            years = _site_years(run, site)
        except InsufficientTimestamps as exc:
            skipped += 1
            _log("harmonize", "site_skipped", site=site.site_id, error=str(exc))
            continue
        if years is None:
            skipped += 1
            continue
        t_y, selected = years
        mosaic_grid = read_geotiff(run.work / "mosaic" / f"{site.site_id}.tif")
        try:
            for year in selected:
                out_path = out_dir / f"{site.site_id}_{year:g}.tif"
                if out_path.exists():
                    produced += 1
                    continue
                rgb = read_geotiff(_fetched_path(run, site.rgb_by_year[year]))
                nirrg = read_geotiff(_fetched_path(run, site.nirrg_by_year[year]))
                stack = stack_bands(OpticalPair(rgb, nirrg))
                resampled = resample_to(stack, mosaic_grid.transform,
                                        mosaic_grid.width, mosaic_grid.height)
                write_geotiff(resampled, out_path)
                produced += 1
                _log("harmonize", "stack_done", site=site.site_id, year=year)
        except CanopyForgeError as exc:
            errors.append((site.site_id, exc))
            _log("harmonize", "site_failed", site=site.site_id, error=str(exc))
    if errors:
        raise StageFailure("harmonize", errors[0][1])
    return {"stacks": produced, "sites_skipped": skipped}


def _stage_tile(run: _Run) -> dict:
    config = run.config
    records = _load_index(run)
    sites = _group_sites(records, config.departments)
    out_dir = run.work / "samples"
    manifest_all = Manifest()
    kept = 0
    errors = []
    for site in sites:
        try:
            years = _site_years(run, site)
        except InsufficientTimestamps:
            continue
        if years is None:
            continue
        t_y, selected = years
        try:
            mosaic_grid = read_geotiff(run.work / "mosaic" / f"{site.site_id}.tif")
            meta = read_metadata(run.work / "mosaic" / f"{site.site_id}.tif")
            mosaic = Mosaic(mosaic_grid, float(meta[KEY_ACQUISITION_YEAR_MEAN]),
                            int(meta[KEY_SOURCE_TILE_COUNT]))
            stacks = [read_geotiff(run.work / "stacks" / f"{site.site_id}_{y:g}.tif")
                      for y in selected]
            _samples, manifest = tile_and_filter(
                stacks, mosaic, out_dir, site.department,
                tile_px=config.tile_px,
                min_valid_fraction=config.min_valid_fraction)
            manifest_all.entries.extend(manifest.entries)
            manifest_all.rejected_tiles += manifest.rejected_tiles
            kept += manifest.kept_tiles
            _log("tile", "site_done", site=site.site_id,
                 kept=manifest.kept_tiles, rejected=manifest.rejected_tiles)
        except CanopyForgeError as exc:
            errors.append((site.site_id, exc))
            _log("tile", "site_failed", site=site.site_id, error=str(exc))
    if errors:
        raise StageFailure("tile", errors[0][1])
    manifest_all.entries.sort(key=lambda e: e.tile_id)
    manifest_all.write(run.work / "manifest.jsonl")
    return {"kept_tiles": kept, "rejected_tiles": manifest_all.rejected_tiles,
            "images": manifest_all.image_count}
