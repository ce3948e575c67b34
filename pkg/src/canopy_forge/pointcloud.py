"""Streaming access to classified LiDAR point clouds.

A cloud handle exposes header-level facts (bounds, count, acquisition year
recovered from GPS time); :func:`stream_batches` walks the points in file
order with bounded memory; :func:`split_by_class` partitions a batch into
ground and vegetation populations.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lasio, lazcodec
from .errors import IoFailure, MalformedFile
from .geo import BBox


@dataclass(frozen=True)
class PointBatch:
    """Chunk of classified points as parallel arrays."""

    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray
    class_codes: np.ndarray
    gps_times: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.xs)
        if not (len(self.ys) == len(self.zs) == len(self.class_codes) == n):
            raise ValueError("batch arrays differ in length")
        if self.gps_times is not None and len(self.gps_times) != n:
            raise ValueError("gps_times length mismatch")

    @property
    def count(self) -> int:
        return len(self.xs)


@dataclass(frozen=True)
class ClassFilter:
    """ASPRS class codes that feed the terrain and surface models.

    IGN's LiDAR product follows the ASPRS convention: 2 = ground and
    3/4/5 = low/medium/high vegetation. Buildings, water, noise and other
    codes are dropped so the canopy model measures vegetation only.
    """

    ground_classes: frozenset[int] = frozenset({2})
    vegetation_classes: frozenset[int] = frozenset({3, 4, 5})

    def __post_init__(self):
        ground = frozenset(self.ground_classes)
        vegetation = frozenset(self.vegetation_classes)
        if ground & vegetation:
            raise ValueError("ground and vegetation classes overlap")
        object.__setattr__(self, "ground_classes", ground)
        object.__setattr__(self, "vegetation_classes", vegetation)


class CloudHandle:
    """Open point-cloud file: header facts plus lazily computed year."""

    def __init__(self, path: Path, buf: bytes, header: lasio.LasHeader,
                 laz_info: lasio.LazInfo | None):
        self.path = path
        self._buf = buf
        self.header = header
        self._laz_info = laz_info
        self._year: float | None = None
        self._year_computed = False

    @property
    def point_count(self) -> int:
        return self.header.point_count

    @property
    def has_gps_time(self) -> bool:
        return self.header.point_format in lasio._GPS_FORMATS

    @property
    def bbox(self) -> BBox | None:
        mins, maxs = self.header.mins, self.header.maxs
        if self.point_count == 0 or mins[0] >= maxs[0] or mins[1] >= maxs[1]:
            return None
        return BBox(mins[0], mins[1], maxs[0], maxs[1])

    @property
    def acquisition_year(self) -> float | None:
        """Mean GPS time of all points as a fractional calendar year.

        Requires adjusted-standard GPS stamps (global encoding bit 0);
        plain GPS week time carries no absolute date. Computed on first
        access, which streams the whole file once.
        """
        if not self._year_computed:
            self._year_computed = True
            self._year = self._compute_year()
        return self._year

    def _compute_year(self) -> float | None:
        if not self.has_gps_time or self.point_count == 0:
            return None
        if not self.header.global_encoding & 1:
            return None  # GPS week time: no absolute date available
        total = 0.0
        count = 0
        for batch in stream_batches(self, 262144):
            total += float(batch.gps_times.sum())
            count += batch.count
        if count == 0:
            return None
        return lasio.adjusted_gps_to_year(total / count)


def open_cloud(path) -> CloudHandle:
    """Open a LAS/LAZ file and validate it against the supported subset."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    header, vlrs = lasio.parse_header(buf)

    laz_info = None
    laszip_payload = vlrs.get((lasio._LASZIP_USER_ID, lasio._LASZIP_VLR_ID))
    if header.compressed or laszip_payload is not None:
        if laszip_payload is None:
            raise MalformedFile(f"{path}: compressed flag set but no laszip VLR")
        laz_info = lasio.parse_laszip_vlr(laszip_payload)
        lasio.check_laz_supported(laz_info)
    else:
        # validate that the advertised record block actually fits the file
        lasio.point_dtype(header.point_format, header.record_length)
        end = header.offset_to_points + header.point_count * header.record_length
        if end > len(buf):
            raise MalformedFile(f"{path}: point records truncated "
                                f"(need {end} bytes, have {len(buf)})")
    return CloudHandle(path, buf, header, laz_info)


def stream_batches(handle: CloudHandle, batch_size: int):
    """Yield PointBatch objects covering the file in order, each of at most
    ``batch_size`` points (exactly ``batch_size`` except for the tail)."""
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    if handle.point_count == 0:
        return
    if handle._laz_info is None:
        yield from _stream_uncompressed(handle, batch_size)
    else:
        yield from _stream_laz(handle, batch_size)


def _stream_uncompressed(handle: CloudHandle, batch_size: int):
    header = handle.header
    dtype = lasio.point_dtype(header.point_format, header.record_length)
    sx, sy, sz = header.scales
    ox, oy, oz = header.offsets
    start = header.offset_to_points
    for base in range(0, header.point_count, batch_size):
        n = min(batch_size, header.point_count - base)
        offset = start + base * dtype.itemsize
        records = np.frombuffer(handle._buf, dtype=dtype, count=n, offset=offset)
        gps = None
        if handle.has_gps_time:
            gps = records["gps_time"].astype(np.float64)
        yield PointBatch(
            xs=records["X"] * sx + ox,
            ys=records["Y"] * sy + oy,
            zs=records["Z"] * sz + oz,
            class_codes=lasio.extract_classification(records, header.point_format),
            gps_times=gps,
        )


def _stream_laz(handle: CloudHandle, batch_size: int):
    header = handle.header
    sx, sy, sz = header.scales
    ox, oy, oz = header.offsets
    has_gps = handle.has_gps_time

    pending: list[PointBatch] = []
    pending_count = 0

    def drain(chunk_xs, chunk_ys, chunk_zs, chunk_cls, chunk_gps):
        nonlocal pending_count
        xs = np.asarray(chunk_xs, dtype=np.float64) * sx + ox
        ys = np.asarray(chunk_ys, dtype=np.float64) * sy + oy
        zs = np.asarray(chunk_zs, dtype=np.float64) * sz + oz
        cls = np.asarray(chunk_cls, dtype=np.uint8) & 0x1F
        gps = None
        if has_gps:
            gps = np.frombuffer(np.asarray(chunk_gps, dtype=np.uint64).tobytes(),
                                dtype=np.float64)
        pending.append(PointBatch(xs, ys, zs, cls, gps))
        pending_count += len(xs)

    def emit():
        nonlocal pending, pending_count
        merged = PointBatch(
            xs=np.concatenate([b.xs for b in pending]),
            ys=np.concatenate([b.ys for b in pending]),
            zs=np.concatenate([b.zs for b in pending]),
            class_codes=np.concatenate([b.class_codes for b in pending]),
            gps_times=(np.concatenate([b.gps_times for b in pending])
                       if has_gps else None),
        )
        out = []
        for base in range(0, merged.count - merged.count % batch_size, batch_size):
            sl = slice(base, base + batch_size)
            out.append(PointBatch(merged.xs[sl], merged.ys[sl], merged.zs[sl],
                                  merged.class_codes[sl],
                                  merged.gps_times[sl] if has_gps else None))
        tail = merged.count % batch_size
        if tail:
            sl = slice(merged.count - tail, merged.count)
            pending = [PointBatch(merged.xs[sl], merged.ys[sl], merged.zs[sl],
                                  merged.class_codes[sl],
                                  merged.gps_times[sl] if has_gps else None)]
            pending_count = tail
        else:
            pending = []
            pending_count = 0
        return out

    chunks = lazcodec.iter_chunk_points(
        handle._buf, handle.header.offset_to_points, handle.point_count,
        handle._laz_info.chunk_size, has_gps)
    for chunk in chunks:
        drain(*chunk)
        if pending_count >= batch_size:
            yield from emit()
    if pending_count:
        yield from emit()
        if pending_count:
            yield pending[0]


def split_by_class(batch: PointBatch, class_filter: ClassFilter = ClassFilter()
                   ) -> tuple[PointBatch | None, PointBatch | None]:
    """Partition a batch into (ground, vegetation); points in neither set
    (buildings, water, noise) are dropped. Empty partitions come back as
    None."""

    def select(codes: frozenset[int]) -> PointBatch | None:
        mask = np.isin(batch.class_codes, list(codes))
        if not mask.any():
            return None
        return PointBatch(
            xs=batch.xs[mask],
            ys=batch.ys[mask],
            zs=batch.zs[mask],
            class_codes=batch.class_codes[mask],
            gps_times=batch.gps_times[mask] if batch.gps_times is not None else None,
        )

    return select(class_filter.ground_classes), select(class_filter.vegetation_classes)


# re-export: fixture generators and the CLI write clouds through this module
write_point_cloud = lasio.write_point_cloud
