"""Command-line interface.

Subcommands mirror the pipeline stages (index, fetch, chm, mosaic,
harmonize, tile), plus `evaluate` for scoring prediction rasters and
`run` for the whole chain under one config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .elevation import RasterizerConfig, process_cloud_tile
from .errors import CanopyForgeError
from .evaluate import evaluate_manifest
from .geo import BBox
from .geotiff import (KEY_ACQUISITION_YEAR, KEY_ACQUISITION_YEAR_MEAN,
                      KEY_SOURCE_TILE_COUNT, read_geotiff, read_metadata,
                      write_geotiff)
from .ingest import build_index, fetch
from .metrics import LossConfig
from .mosaic import DatedGrid, Mosaic, merge
from .harmonize import OpticalPair, resample_to, stack_bands
from .pipeline import STAGES, run_pipeline, validate_config
from .sampler import tile_and_filter


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canopy-forge",
        description="LiDAR + orthophoto to canopy-height training samples")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-json", action="store_true",
                        help="emit structured JSON log lines on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="normalize a tile catalog")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fetch", help="download/copy catalog tiles")
    p.add_argument("--catalog", required=True)
    p.add_argument("--dest", required=True)
    p.add_argument("--parallel", type=int, default=4)
    p.add_argument("--retries", type=int, default=2)

    p = sub.add_parser("chm", help="point cloud tile -> canopy height raster")
    p.add_argument("--input", required=True, help="LAS/LAZ tile")
    p.add_argument("--out", required=True, help="output GeoTIFF")
    p.add_argument("--cell", type=float, default=0.5)
    p.add_argument("--window", type=float, default=10.0)
    p.add_argument("--year", type=float, default=None,
                   help="acquisition year override (else mean GPS time)")

    p = sub.add_parser("mosaic", help="merge dated canopy rasters")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--bbox", nargs=4, type=float, required=True,
                   metavar=("MINX", "MINY", "MAXX", "MAXY"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("harmonize", help="stack RGB+NIR and resample")
    p.add_argument("--rgb", required=True)
    p.add_argument("--nirrg", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-like", default=None,
                   help="raster whose grid the stack is resampled onto")

    p = sub.add_parser("tile", help="cut stacks + canopy mosaic into samples")
    p.add_argument("--stacks", nargs=3, required=True)
    p.add_argument("--chm", required=True, help="canopy mosaic GeoTIFF")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--department", default="")
    p.add_argument("--tile-px", type=int, default=256)
    p.add_argument("--min-valid", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=42,
                   help="recorded for provenance; timestamp selection happens "
                        "in the run pipeline, not here")

    p = sub.add_parser("evaluate", help="score prediction rasters")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=float, default=10.0)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--report", default=None)
    p.add_argument("--png-dir", default=None)

    p = sub.add_parser("run", help="run the whole pipeline from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--dry-run", action="store_true")
    for name in ("cell-size", "smoothing-window", "min-valid-fraction",
                 "k", "theta"):
        p.add_argument(f"--{name}", type=float, default=None)
    for name in ("seed", "tile-px", "max-parallel", "retries", "workers"):
        p.add_argument(f"--{name}", type=int, default=None)
    p.add_argument("--departments", nargs="*", default=None)

    return parser


def _cmd_index(args) -> int:
    records = build_index(args.catalog)
    lines = []
    for r in records:
        lines.append(json.dumps({
            "id": r.id, "kind": r.kind, "minx": r.bbox.min_x,
            "miny": r.bbox.min_y, "maxx": r.bbox.max_x, "maxy": r.bbox.max_y,
            "year": r.acquisition_year, "url": r.url_or_path,
            "department": r.department}, sort_keys=True))
    Path(args.out).write_text("\n".join(lines) + ("\n" if lines else ""))
    print(f"indexed {len(records)} tiles -> {args.out}")
    return 0


def _cmd_fetch(args) -> int:
    records = build_index(args.catalog)
    paths = fetch(records, args.dest, args.parallel, args.retries)
    print(f"fetched {len(paths)} tiles -> {args.dest}")
    return 0


def _cmd_chm(args) -> int:
    cfg = RasterizerConfig(cell_size=args.cell, smoothing_window=args.window)
    chm, year = process_cloud_tile(args.input, cfg, year_override=args.year)
    metadata = {}
    if year is not None:
        metadata[KEY_ACQUISITION_YEAR] = repr(float(year))
    write_geotiff(chm, args.out, metadata=metadata)
    print(f"canopy raster {chm.width}x{chm.height} -> {args.out}"
          + (f" (year {year:.3f})" if year is not None else ""))
    return 0


def _cmd_mosaic(args) -> int:
    tiles = []
    for path in args.inputs:
        grid = read_geotiff(path)
        meta = read_metadata(path)
        if KEY_ACQUISITION_YEAR not in meta:
            raise CanopyForgeError(f"{path} lacks {KEY_ACQUISITION_YEAR} metadata")
        tiles.append(DatedGrid(grid, float(meta[KEY_ACQUISITION_YEAR]),
                               source_id=Path(path).stem))
    bbox = BBox(*args.bbox)
    cell = tiles[0].grid.transform.pixel_size_x
    width = round(bbox.width / cell)
    height = round(bbox.height / cell)
    target = dataclasses.replace(tiles[0].grid.transform,
                                 origin_x=bbox.min_x, origin_y=bbox.max_y)
    mosaic = merge(tiles, target, width, height)
    write_geotiff(mosaic.grid, args.out, metadata={
        KEY_ACQUISITION_YEAR_MEAN: repr(float(mosaic.mean_year)),
        KEY_SOURCE_TILE_COUNT: str(mosaic.source_count)})
    print(f"mosaic of {mosaic.source_count} tiles, mean year "
          f"{mosaic.mean_year:.3f} -> {args.out}")
    return 0


def _cmd_harmonize(args) -> int:
    rgb = read_geotiff(args.rgb)
    nirrg = read_geotiff(args.nirrg)
    stack = stack_bands(OpticalPair(rgb, nirrg))
    if args.target_like:
        template = read_geotiff(args.target_like)
        stack = resample_to(stack, template.transform, template.width,
                            template.height)
    write_geotiff(stack, args.out)
    print(f"5-band stack {stack.width}x{stack.height} -> {args.out}")
    return 0


def _cmd_tile(args) -> int:
    chm_grid = read_geotiff(args.chm)
    meta = read_metadata(args.chm)
    mosaic = Mosaic(chm_grid, float(meta[KEY_ACQUISITION_YEAR_MEAN]),
                    int(meta.get(KEY_SOURCE_TILE_COUNT, "1")))
    stacks = [read_geotiff(p) for p in args.stacks]
    _samples, manifest = tile_and_filter(
        stacks, mosaic, args.out_dir, args.department,
        tile_px=args.tile_px, min_valid_fraction=args.min_valid)
    manifest.write(args.manifest)
    print(f"kept {manifest.kept_tiles} tiles, rejected {manifest.rejected_tiles} "
          f"-> {args.manifest}")
    return 0


def _cmd_evaluate(args) -> int:
    report = evaluate_manifest(args.manifest, args.pred_dir,
                               LossConfig(k=args.k, theta=args.theta),
                               report_path=args.report, png_dir=args.png_dir)
    agg = report["aggregate"]
    fmt = {k: (f"{v:.6f}" if v is not None else "n/a") for k, v in agg.items()}
    print(f"tiles {report['tile_count']}  wmse {fmt['wmse']}  "
          f"mmse {fmt['mmse']}  mmae {fmt['mmae']}")
    return 0


def _cmd_run(args) -> int:
    config = validate_config(args.config)
    overrides = {
        "cell_size": args.cell_size,
        "smoothing_window": args.smoothing_window,
        "min_valid_fraction": args.min_valid_fraction,
        "k": args.k,
        "theta": args.theta,
        "seed": args.seed,
        "tile_px": args.tile_px,
        "max_parallel": args.max_parallel,
        "retries": args.retries,
        "workers": args.workers,
        "departments": tuple(args.departments) if args.departments is not None else None,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        config = dataclasses.replace(config, **overrides)

    if args.dry_run:
        from .pipeline import _Run

        run = _Run(config)
        print(f"work dir: {config.work_dir}")
        for stage in STAGES:
            state = "skip (done)" if run.is_done(stage) else "run"
            print(f"  {stage:10s} {state}")
        return 0

    summary = run_pipeline(config)
    for stage in STAGES:
        info = summary.get(stage, {})
        state = "skipped" if info.get("skipped") else f"{info.get('seconds', 0)}s"
        counts = {k: v for k, v in info.items()
                  if k not in ("skipped", "seconds") and isinstance(v, int)}
        print(f"{stage:10s} {state:10s} {counts}")
    return 0


_COMMANDS = {
    "index": _cmd_index,
    "fetch": _cmd_fetch,
    "chm": _cmd_chm,
    "mosaic": _cmd_mosaic,
    "harmonize": _cmd_harmonize,
    "tile": _cmd_tile,
    "evaluate": _cmd_evaluate,
    "run": _cmd_run,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    if args.log_json:
        handler.setFormatter(logging.Formatter("%(message)s"))
        logging.getLogger("canopy_forge").setLevel(logging.INFO)
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        logging.getLogger("canopy_forge").setLevel(logging.WARNING)
    logging.getLogger("canopy_forge").addHandler(handler)
    try:
        return _COMMANDS[args.command](args)
    except CanopyForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
