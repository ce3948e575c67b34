"""Tile catalog handling, point-cloud/optical matching, and resumable
parallel fetching.

The data source is abstracted behind a catalog file (JSON-lines or CSV)
whose rows name each tile's id, kind, bounds, acquisition year and a URL
or local path, so the whole pipeline runs offline against local fixtures
as well as against a live tile server.
"""

from __future__ import annotations

import csv
import json
import logging
import shutil
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import FetchFailure, MalformedCatalog
from .geo import BBox, bbox_contains

logger = logging.getLogger("canopy_forge")

KINDS = ("pointcloud", "rgb", "nirrg")

_YEAR_RANGE = (2000.0, 2100.0)


@dataclass(frozen=True)
class TileRecord:
    id: str
    kind: str
    bbox: BBox
    url_or_path: str
    acquisition_year: float
    department: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown tile kind {self.kind!r}")
        if not _YEAR_RANGE[0] <= self.acquisition_year <= _YEAR_RANGE[1]:
            raise ValueError(f"implausible acquisition year {self.acquisition_year}")


@dataclass(frozen=True)
class MatchSet:
    optical: TileRecord
    pointcloud_tiles: tuple[TileRecord, ...]

    def __post_init__(self):
        for tile in self.pointcloud_tiles:
            if not bbox_contains(self.optical.bbox, tile.bbox):
                raise ValueError(
                    f"cloud tile {tile.id} escapes optical tile {self.optical.id}")


def _record_from_row(row: dict, where: str) -> TileRecord:
    required = ("id", "kind", "minx", "miny", "maxx", "maxy", "year", "url")
    missing = [key for key in required if key not in row or row[key] in ("", None)]
    if missing:
        raise MalformedCatalog(f"{where}: missing field(s) {', '.join(missing)}")
    try:
        bbox = BBox(float(row["minx"]), float(row["miny"]),
                    float(row["maxx"]), float(row["maxy"]))
    except (TypeError, ValueError) as exc:
        raise MalformedCatalog(f"{where}: bad bbox: {exc}") from exc
    try:
        return TileRecord(
            id=str(row["id"]),
            kind=str(row["kind"]).lower(),
            bbox=bbox,
            url_or_path=str(row["url"]),
            acquisition_year=float(row["year"]),
            department=str(row.get("department", "") or ""),
        )
    except (TypeError, ValueError) as exc:
        raise MalformedCatalog(f"{where}: {exc}") from exc


def build_index(source) -> list[TileRecord]:
    """Load a catalog (JSON-lines or CSV by extension) into tile records,
    deduplicated and deterministically ordered by (department, kind, id)."""
    path = Path(source)
    if not path.exists():
        raise MalformedCatalog(f"catalog {path} does not exist")

    rows: list[tuple[dict, str]] = []
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as handle:
            for i, row in enumerate(csv.DictReader(handle), start=2):
                rows.append((row, f"{path}:{i}"))
    else:
        for i, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rows.append((json.loads(line), f"{path}:{i}"))
            except json.JSONDecodeError as exc:
                raise MalformedCatalog(f"{path}:{i}: bad JSON: {exc}") from exc

    records: dict[str, TileRecord] = {}
    for row, where in rows:
        record = _record_from_row(row, where)
        existing = records.get(record.id)
        if existing is not None:
            if existing != record:
                raise MalformedCatalog(
                    f"{where}: duplicate id {record.id!r} with conflicting content")
            continue  # identical duplicate rows collapse
        records[record.id] = record
    return sorted(records.values(), key=lambda r: (r.department, r.kind, r.id))


def match_tiles(optical: list[TileRecord], clouds: list[TileRecord]
                ) -> list[MatchSet]:
    """Pair each optical tile with the point-cloud tiles contained in its
    bounds (closed containment); optical tiles without matches are omitted."""
    matches = []
    for opt in optical:
        inside = tuple(c for c in clouds if bbox_contains(opt.bbox, c.bbox))
        if inside:
            matches.append(MatchSet(opt, inside))
    return matches


def local_fetch_path(dest_dir, record: TileRecord) -> Path:
    suffix = Path(record.url_or_path).suffix or ""
    return Path(dest_dir) / record.kind / f"{record.id}{suffix}"


def _transfer(record: TileRecord, target: Path, timeout: float) -> None:
    source = record.url_or_path
    if source.startswith(("http://", "https://")):
        with urllib.request.urlopen(source, timeout=timeout) as response:
            with target.open("wb") as out:
                shutil.copyfileobj(response, out)
    else:
        src = Path(source)
        if not src.exists():
            raise FileNotFoundError(source)
        shutil.copyfile(src, target)


def _source_size(record: TileRecord) -> int | None:
    source = record.url_or_path
    if source.startswith(("http://", "https://")):
        return None  # avoid a HEAD round-trip; presence check is enough
    src = Path(source)
    return src.stat().st_size if src.exists() else None


def fetch(records: list[TileRecord], dest_dir, max_parallel: int = 4,
          retries: int = 2, *, backoff_base: float = 1.0,
          timeout: float = 60.0, transfer=_transfer) -> list[Path]:
    """Fetch every record to ``dest_dir/<kind>/<id>``, skipping files that
    are already present with the expected size. Failed transfers retry with
    exponential backoff (base 1 s, factor 2); exhausted retries raise
    FetchFailure with partial files removed.

    Returns local paths in record order. ``transfer`` is injectable for
    tests that simulate flaky sources.
    """
    dest_dir = Path(dest_dir)
    results: dict[str, Path] = {}

    def fetch_one(record: TileRecord) -> Path:
        target = local_fetch_path(dest_dir, record)
        if target.exists():
            expected = _source_size(record)
            if expected is None or target.stat().st_size == expected:
                logger.info(json.dumps({"stage": "fetch", "event": "cached",
                                        "tile": record.id}))
                return target
        target.parent.mkdir(parents=True, exist_ok=True)
        attempts = retries + 1
        for attempt in range(attempts):
            try:
                transfer(record, target, timeout)
                return target
            except Exception as exc:
                if target.exists():
                    target.unlink()  # never leave partial downloads behind
                if attempt + 1 == attempts:
                    raise FetchFailure(record.id, attempts, str(exc)) from exc
                time.sleep(backoff_base * (2 ** attempt))
        raise AssertionError("unreachable")

    with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
        futures = {record.id: pool.submit(fetch_one, record) for record in records}
        errors = []
        for record in records:
            try:
                results[record.id] = futures[record.id].result()
            except FetchFailure as exc:
                errors.append(exc)
        if errors:
            raise errors[0]
    return [results[record.id] for record in records]
