"""LAS/LAZ container handling: headers, uncompressed point records, and the
glue around :mod:`canopy_forge.lazcodec` for compressed streams.

Supported subset: LAS 1.0-1.4 with point formats 0-3 and 6-8 uncompressed,
and pointwise-chunked LAZ for point formats 0 and 1 (read and write).
Layered compression (point formats 6+, which includes COPC files) is
detected and rejected with a clear error.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import lazcodec
from .errors import IoFailure, MalformedFile, UnsupportedVersion

_HEADER_FMT_12 = "<4sHHIHH8sBB32s32sHHHIIBHI5I3d3d6d"
_HEADER_SIZE_12 = struct.calcsize(_HEADER_FMT_12)
_VLR_FMT = "<H16sHH32s"
_VLR_SIZE = struct.calcsize(_VLR_FMT)

_LASZIP_VLR_ID = 22204
_LASZIP_USER_ID = b"laszip encoded"
_COPC_USER_ID = b"copc"

_COMPRESSOR_POINTWISE = 1
_COMPRESSOR_POINTWISE_CHUNKED = 2
_COMPRESSOR_LAYERED_CHUNKED = 3

# GPS epoch 1980-01-06 in Unix seconds; adjusted standard GPS time is offset
# by -1e9 s. The constant 18 s GPS-UTC divergence is negligible for
# fractional-year purposes but kept for correctness.
_GPS_EPOCH_UNIX = 315964800.0
_GPS_UTC_LEAP = 18.0
_GPS_TIME_ADJUSTMENT = 1.0e9

_POINT_DTYPES = {
    0: [("X", "<i4"), ("Y", "<i4"), ("Z", "<i4"), ("intensity", "<u2"),
        ("flags", "u1"), ("raw_classification", "u1"), ("scan_angle_rank", "i1"),
        ("user_data", "u1"), ("point_source_id", "<u2")],
    6: [("X", "<i4"), ("Y", "<i4"), ("Z", "<i4"), ("intensity", "<u2"),
        ("returns", "u1"), ("flags", "u1"), ("classification", "u1"),
        ("user_data", "u1"), ("scan_angle", "<i2"), ("point_source_id", "<u2"),
        ("gps_time", "<f8")],
}
_POINT_DTYPES[1] = _POINT_DTYPES[0] + [("gps_time", "<f8")]
_POINT_DTYPES[2] = _POINT_DTYPES[0] + [("red", "<u2"), ("green", "<u2"), ("blue", "<u2")]
_POINT_DTYPES[3] = _POINT_DTYPES[1] + [("red", "<u2"), ("green", "<u2"), ("blue", "<u2")]
_POINT_DTYPES[7] = _POINT_DTYPES[6] + [("red", "<u2"), ("green", "<u2"), ("blue", "<u2")]
_POINT_DTYPES[8] = _POINT_DTYPES[7] + [("nir", "<u2")]

_GPS_FORMATS = {1, 3, 6, 7, 8}


@dataclass
class LasHeader:
    version: tuple[int, int]
    global_encoding: int
    point_format: int
    record_length: int
    point_count: int
    scales: tuple[float, float, float]
    offsets: tuple[float, float, float]
    mins: tuple[float, float, float]
    maxs: tuple[float, float, float]
    offset_to_points: int
    compressed: bool


@dataclass
class LazInfo:
    compressor: int
    chunk_size: int
    items: list[tuple[int, int, int]]  # (type, size, version)


def adjusted_gps_to_year(adjusted: float) -> float:
    """Convert mean Adjusted-Standard-GPS seconds to a fractional year."""
    unix = adjusted + _GPS_TIME_ADJUSTMENT + _GPS_EPOCH_UNIX - _GPS_UTC_LEAP
    moment = datetime.fromtimestamp(unix, tz=timezone.utc)
    start = datetime(moment.year, 1, 1, tzinfo=timezone.utc).timestamp()
    end = datetime(moment.year + 1, 1, 1, tzinfo=timezone.utc).timestamp()
    return moment.year + (unix - start) / (end - start)


def year_to_adjusted_gps(year: float) -> float:
    """Inverse of :func:`adjusted_gps_to_year`, used to synthesize clouds."""
    whole = math.floor(year)
    start = datetime(int(whole), 1, 1, tzinfo=timezone.utc).timestamp()
    end = datetime(int(whole) + 1, 1, 1, tzinfo=timezone.utc).timestamp()
    unix = start + (year - whole) * (end - start)
    return unix - _GPS_EPOCH_UNIX + _GPS_UTC_LEAP - _GPS_TIME_ADJUSTMENT


def parse_header(buf: bytes) -> tuple[LasHeader, dict]:
    """Parse the LAS public header block and the VLR directory."""
    if len(buf) < _HEADER_SIZE_12:
        raise MalformedFile("file too short for a LAS header")
    fields = struct.unpack_from(_HEADER_FMT_12, buf, 0)
    (signature, _source_id, global_encoding, _g1, _g2, _g3, _g4,
     vmajor, vminor, _sysid, _software, _day, _year, header_size,
     offset_to_points, n_vlrs, point_format_raw, record_length,
     legacy_count, *rest) = fields
    if signature != b"LASF":
        raise MalformedFile("not a LAS file (bad signature)")
    if vmajor != 1 or vminor > 4:
        raise UnsupportedVersion(f"LAS {vmajor}.{vminor} is not supported")

    scales = tuple(rest[5:8])
    offs = tuple(rest[8:11])
    max_x, min_x, max_y, min_y, max_z, min_z = rest[11:17]

    point_count = legacy_count
    if vminor >= 4:
        if len(buf) < 375:
            raise MalformedFile("truncated LAS 1.4 header")
        count64 = struct.unpack_from("<Q", buf, 247)[0]
        if count64:
            point_count = count64

    compressed = bool(point_format_raw & 0x80)
    point_format = point_format_raw & 0x7F

    vlrs = {}
    pos = header_size
    for _ in range(n_vlrs):
        if pos + _VLR_SIZE > len(buf):
            raise MalformedFile("truncated VLR directory")
        _res, user_id, record_id, length, _desc = struct.unpack_from(_VLR_FMT, buf, pos)
        pos += _VLR_SIZE
        if pos + length > len(buf):
            raise MalformedFile("truncated VLR payload")
        vlrs[(user_id.rstrip(b"\0"), record_id)] = buf[pos:pos + length]
        pos += length

    header = LasHeader(
        version=(vmajor, vminor),
        global_encoding=global_encoding,
        point_format=point_format,
        record_length=record_length,
        point_count=point_count,
        scales=scales,
        offsets=offs,
        mins=(min_x, min_y, min_z),
        maxs=(max_x, max_y, max_z),
        offset_to_points=offset_to_points,
        compressed=compressed,
    )
    return header, vlrs


def parse_laszip_vlr(payload: bytes) -> LazInfo:
    if len(payload) < 34:
        raise MalformedFile("laszip VLR too short")
    compressor, _coder, _vmaj, _vmin, _vrev, _options, chunk_size = \
        struct.unpack_from("<HHBBHIi", payload, 0)
    n_items = struct.unpack_from("<H", payload, 32)[0]
    items = []
    pos = 34
    for _ in range(n_items):
        if pos + 6 > len(payload):
            raise MalformedFile("laszip VLR item list truncated")
        items.append(struct.unpack_from("<HHH", payload, pos))
        pos += 6
    return LazInfo(compressor, chunk_size, items)


def point_dtype(point_format: int, record_length: int) -> np.dtype:
    if point_format not in _POINT_DTYPES:
        raise UnsupportedVersion(f"point format {point_format} is not supported")
    fields = _POINT_DTYPES[point_format]
    base = np.dtype(fields)
    if record_length < base.itemsize:
        raise MalformedFile(
            f"record length {record_length} too small for point format {point_format}")
    if record_length == base.itemsize:
        return base
    # extra bytes after the standard fields: keep them as padding
    return np.dtype({"names": [f[0] for f in fields],
                     "formats": [f[1] for f in fields],
                     "itemsize": record_length})


def extract_classification(records: np.ndarray, point_format: int) -> np.ndarray:
    if point_format >= 6:
        return records["classification"].astype(np.uint8)
    # legacy formats keep synthetic/keypoint/withheld flags in the top 3 bits
    return (records["raw_classification"] & 0x1F).astype(np.uint8)


def check_laz_supported(info: LazInfo) -> bool:
    """True when the stream uses pointwise-chunked POINT10[+GPSTIME11] v2."""
    if info.compressor == _COMPRESSOR_LAYERED_CHUNKED:
        raise UnsupportedVersion(
            "layered LAZ compression (point formats 6-8, incl. COPC) is not "
            "supported; re-export the tile as LAZ point format 0 or 1")
    if info.compressor != _COMPRESSOR_POINTWISE_CHUNKED:
        raise UnsupportedVersion(f"LAZ compressor {info.compressor} is not supported")
    if info.chunk_size in (0, 0xFFFFFFFF) or info.chunk_size < 0:
        raise UnsupportedVersion("adaptive LAZ chunking is not supported")
    kinds = [(t, v) for t, _s, v in info.items]
    if kinds not in ([(lazcodec.ITEM_POINT10, 2)],
                     [(lazcodec.ITEM_POINT10, 2), (lazcodec.ITEM_GPSTIME11, 2)]):
        raise UnsupportedVersion(f"LAZ item layout {kinds} is not supported")
    return len(kinds) == 2


# --- writing ------------------------------------------------------------------


def write_point_cloud(path, xs, ys, zs, classifications, gps_times=None, *,
                      scale: float = 0.001, chunk_size: int = lazcodec.CHUNK_SIZE_DEFAULT,
                      compress: bool | None = None) -> None:
    """Write a classified point cloud as LAS (or LAZ when the path ends in
    ``.laz`` or ``compress=True``).

    ``gps_times`` are Adjusted Standard GPS seconds; when given the file uses
    point format 1 and sets the corresponding global-encoding bit.
    """
    path = Path(path)
    if compress is None:
        compress = path.suffix.lower() == ".laz"

    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    zs = np.asarray(zs, dtype=np.float64)
    classifications = np.asarray(classifications, dtype=np.uint8)
    n = len(xs)
    if not (len(ys) == len(zs) == len(classifications) == n):
        raise ValueError("coordinate and classification arrays differ in length")
    if gps_times is not None:
        gps_times = np.asarray(gps_times, dtype=np.float64)
        if len(gps_times) != n:
            raise ValueError("gps_times length mismatch")

    has_gps = gps_times is not None
    point_format = 1 if has_gps else 0
    record_length = 28 if has_gps else 20

    if n:
        offs = (math.floor(xs.min()), math.floor(ys.min()), math.floor(zs.min()))
    else:
        offs = (0.0, 0.0, 0.0)
    ix = np.round((xs - offs[0]) / scale).astype(np.int64)
    iy = np.round((ys - offs[1]) / scale).astype(np.int64)
    iz = np.round((zs - offs[2]) / scale).astype(np.int64)
    for arr in (ix, iy, iz):
        if n and (arr.min() < -(2 ** 31) or arr.max() >= 2 ** 31):
            raise ValueError("coordinates do not fit 32-bit storage at this scale")

    # header extents reflect the quantized coordinates actually stored
    if n:
        mins = tuple(a.min() * scale + o for a, o in zip((ix, iy, iz), offs))
        maxs = tuple(a.max() * scale + o for a, o in zip((ix, iy, iz), offs))
    else:
        mins = maxs = (0.0, 0.0, 0.0)

    vlrs = []
    if compress:
        items = [(lazcodec.ITEM_POINT10, 20, 2)]
        if has_gps:
            items.append((lazcodec.ITEM_GPSTIME11, 8, 2))
        payload = struct.pack("<HHBBHIi", _COMPRESSOR_POINTWISE_CHUNKED, 0, 2, 2, 0,
                              0, chunk_size)
        payload += struct.pack("<qq", -1, -1)
        payload += struct.pack("<H", len(items))
        for item in items:
            payload += struct.pack("<HHH", *item)
        vlrs.append((_LASZIP_USER_ID, _LASZIP_VLR_ID, payload))

    vlr_bytes = b"".join(
        struct.pack(_VLR_FMT, 0, user.ljust(16, b"\0"), rid, len(data), b"\0" * 32) + data
        for user, rid, data in vlrs
    )
    offset_to_points = _HEADER_SIZE_12 + len(vlr_bytes)

    header = struct.pack(
        _HEADER_FMT_12,
        b"LASF", 0, 1 if has_gps else 0, 0, 0, 0, b"\0" * 8,
        1, 2, b"canopy-forge".ljust(32, b"\0"), b"canopy-forge 0.1".ljust(32, b"\0"),
        0, 0, _HEADER_SIZE_12, offset_to_points, len(vlrs),
        (point_format | 0x80) if compress else point_format, record_length,
        n, n, 0, 0, 0, 0,
        scale, scale, scale, float(offs[0]), float(offs[1]), float(offs[2]),
        maxs[0], mins[0], maxs[1], mins[1], maxs[2], mins[2],
    )

    if compress:
        points = []
        for i in range(n):
            pt = lazcodec.Point10()
            pt.x = int(ix[i])
            pt.y = int(iy[i])
            pt.z = int(iz[i])
            pt.return_num = 1
            pt.num_returns = 1
            pt.classification = int(classifications[i])
            points.append(pt)
        gps_u64 = None
        if has_gps:
            gps_u64 = [int.from_bytes(struct.pack("<d", t), "little")
                       for t in gps_times]
        if n:
            body = lazcodec.encode_chunked_points(points, gps_u64, offset_to_points,
                                                  chunk_size)
        else:
            body = (offset_to_points + 8).to_bytes(8, "little") + \
                (0).to_bytes(4, "little") + (0).to_bytes(4, "little")
    else:
        records = np.zeros(n, dtype=point_dtype(point_format, record_length))
        records["X"] = ix
        records["Y"] = iy
        records["Z"] = iz
        records["flags"] = 0b001001  # first of one return
        records["raw_classification"] = classifications
        if has_gps:
            records["gps_time"] = gps_times
        body = records.tobytes()

    try:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(header + vlr_bytes + body)
        tmp.replace(path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
