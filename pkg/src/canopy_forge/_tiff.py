"""Minimal classic-TIFF reader/writer used by :mod:`canopy_forge.geotiff`.

Scope is deliberately narrow: little-endian classic TIFF, single IFD,
chunky planar layout, uncompressed or DEFLATE data, strips or tiles.
That covers everything this pipeline writes plus the common GDAL output
flavors it needs to read back. Anything else raises
:class:`~canopy_forge.errors.UnsupportedLayout` rather than guessing.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import MalformedFile, UnsupportedLayout

# field types we understand: type id -> (struct letter, byte size)
_FIELD_TYPES = {
    1: ("B", 1),   # BYTE
    2: ("c", 1),   # ASCII
    3: ("H", 2),   # SHORT
    4: ("I", 4),   # LONG
    5: ("II", 8),  # RATIONAL (two LONGs)
    12: ("d", 8),  # DOUBLE
}

# tag ids used in this module
IMAGE_WIDTH = 256
IMAGE_LENGTH = 257
BITS_PER_SAMPLE = 258
COMPRESSION = 259
PHOTOMETRIC = 262
STRIP_OFFSETS = 273
SAMPLES_PER_PIXEL = 277
ROWS_PER_STRIP = 278
STRIP_BYTE_COUNTS = 279
PLANAR_CONFIG = 284
PREDICTOR = 317
TILE_WIDTH = 322
TILE_LENGTH = 323
TILE_OFFSETS = 324
TILE_BYTE_COUNTS = 325
SAMPLE_FORMAT = 339
MODEL_PIXEL_SCALE = 33550
MODEL_TIEPOINT = 33922
MODEL_TRANSFORMATION = 34264
GEO_KEY_DIRECTORY = 34735
GDAL_METADATA = 42112
GDAL_NODATA = 42113

COMPRESSION_NONE = 1
COMPRESSION_DEFLATE = 8
COMPRESSION_DEFLATE_OLD = 32946  # legacy code, same codec

SAMPLEFORMAT_UINT = 1
SAMPLEFORMAT_IEEEFP = 3


@dataclass
class IfdEntry:
    tag: int
    type_id: int
    values: tuple


def read_ifd(data: bytes) -> dict[int, IfdEntry]:
    """Parse the first IFD of a classic little-endian TIFF byte string."""
    if len(data) < 8:
        raise MalformedFile("file too short to be a TIFF")
    byte_order = data[:2]
    if byte_order == b"MM":
        raise UnsupportedLayout("big-endian TIFF is not supported")
    if byte_order != b"II":
        raise MalformedFile("not a TIFF file (bad byte-order mark)")
    magic = struct.unpack_from("<H", data, 2)[0]
    if magic == 43:
        raise UnsupportedLayout("BigTIFF is not supported")
    if magic != 42:
        raise MalformedFile(f"not a TIFF file (magic {magic})")

    ifd_offset = struct.unpack_from("<I", data, 4)[0]
    if ifd_offset + 2 > len(data):
        raise MalformedFile("IFD offset out of range")
    (n_entries,) = struct.unpack_from("<H", data, ifd_offset)
    entries: dict[int, IfdEntry] = {}
    pos = ifd_offset + 2
    if pos + 12 * n_entries + 4 > len(data):
        raise MalformedFile("truncated IFD")
    for _ in range(n_entries):
        tag, type_id, count, raw = struct.unpack_from("<HHI4s", data, pos)
        pos += 12
        if type_id not in _FIELD_TYPES:
            continue  # unknown field type: legal to skip per TIFF spec
        letter, size = _FIELD_TYPES[type_id]
        total = size * count
        if total <= 4:
            payload = raw[:total]
        else:
            (offset,) = struct.unpack("<I", raw)
            if offset + total > len(data):
                raise MalformedFile(f"tag {tag} value out of range")
            payload = data[offset : offset + total]
        if type_id == 2:
            values = (payload.split(b"\0", 1)[0].decode("latin-1"),)
        elif type_id == 5:
            pairs = struct.unpack(f"<{2 * count}I", payload)
            values = tuple(n / d if d else 0.0 for n, d in zip(pairs[::2], pairs[1::2]))
        else:
            values = struct.unpack(f"<{count}{letter}", payload)
        entries[tag] = IfdEntry(tag, type_id, values)
    return entries


def decode_payload(blob: bytes, compression: int) -> bytes:
    if compression == COMPRESSION_NONE:
        return blob
    if compression in (COMPRESSION_DEFLATE, COMPRESSION_DEFLATE_OLD):
        try:
            return zlib.decompress(blob)
        except zlib.error as exc:
            raise MalformedFile(f"bad DEFLATE block: {exc}") from exc
    raise UnsupportedLayout(f"compression {compression} is not supported")


def read_image_array(data: bytes, ifd: dict[int, IfdEntry]) -> np.ndarray:
    """Decode pixel data into an (height, width, samples) array."""

    def val(tag, default=None):
        entry = ifd.get(tag)
        if entry is None:
            if default is None:
                raise MalformedFile(f"required TIFF tag {tag} missing")
            return default
        return entry.values

    width = val(IMAGE_WIDTH)[0]
    height = val(IMAGE_LENGTH)[0]
    spp = val(SAMPLES_PER_PIXEL, (1,))[0]
    bits = val(BITS_PER_SAMPLE, (1,))
    compression = val(COMPRESSION, (COMPRESSION_NONE,))[0]
    predictor = val(PREDICTOR, (1,))[0]
    planar = val(PLANAR_CONFIG, (1,))[0]
    sample_format = val(SAMPLE_FORMAT, (SAMPLEFORMAT_UINT,) * spp)

    if predictor != 1:
        raise UnsupportedLayout(f"TIFF predictor {predictor} is not supported")
    if planar != 1:
        raise UnsupportedLayout("planar (band-separate) TIFF layout not supported")
    if len(set(bits)) != 1 or len(set(sample_format)) != 1:
        raise UnsupportedLayout("mixed per-band sample types are not supported")

    dtype = _dtype_for(bits[0], sample_format[0])

    out = np.zeros((height, width, spp), dtype=dtype)
    if TILE_OFFSETS in ifd:
        tw = val(TILE_WIDTH)[0]
        th = val(TILE_LENGTH)[0]
        offsets = val(TILE_OFFSETS)
        counts = val(TILE_BYTE_COUNTS)
        tiles_across = (width + tw - 1) // tw
        tiles_down = (height + th - 1) // th
        if len(offsets) != tiles_across * tiles_down:
            raise MalformedFile("tile count does not match image size")
        for idx, (off, cnt) in enumerate(zip(offsets, counts)):
            if off + cnt > len(data):
                raise MalformedFile("tile data out of range")
            raw = decode_payload(data[off : off + cnt], compression)
            expect = tw * th * spp * dtype.itemsize
            if len(raw) < expect:
                raise MalformedFile("tile shorter than expected")
            tile = np.frombuffer(raw[:expect], dtype=dtype).reshape(th, tw, spp)
            r0 = (idx // tiles_across) * th
            c0 = (idx % tiles_across) * tw
            r1 = min(r0 + th, height)
            c1 = min(c0 + tw, width)
            out[r0:r1, c0:c1] = tile[: r1 - r0, : c1 - c0]
    elif STRIP_OFFSETS in ifd:
        rps = val(ROWS_PER_STRIP, (height,))[0]
        offsets = val(STRIP_OFFSETS)
        counts = val(STRIP_BYTE_COUNTS)
        row = 0
        for off, cnt in zip(offsets, counts):
            if off + cnt > len(data):
                raise MalformedFile("strip data out of range")
            raw = decode_payload(data[off : off + cnt], compression)
            nrows = min(rps, height - row)
            expect = nrows * width * spp * dtype.itemsize
            if len(raw) < expect:
                raise MalformedFile("strip shorter than expected")
            out[row : row + nrows] = np.frombuffer(raw[:expect], dtype=dtype).reshape(
                nrows, width, spp
            )
            row += nrows
        if row < height:
            raise MalformedFile("strips do not cover the image")
    else:
        raise MalformedFile("TIFF has neither strip nor tile offsets")
    return out


def _dtype_for(bits: int, fmt: int) -> np.dtype:
    table = {
        (8, SAMPLEFORMAT_UINT): "<u1",
        (16, SAMPLEFORMAT_UINT): "<u2",
        (32, SAMPLEFORMAT_UINT): "<u4",
        (32, SAMPLEFORMAT_IEEEFP): "<f4",
        (64, SAMPLEFORMAT_IEEEFP): "<f8",
    }
    key = (bits, fmt)
    if key not in table:
        raise UnsupportedLayout(f"sample type bits={bits} format={fmt} not supported")
    return np.dtype(table[key])


class TiffFileWriter:
    """Assembles a single-IFD little-endian classic TIFF in memory."""

    def __init__(self):
        self._blocks: list[bytes] = []  # data blocks placed right after header
        self._entries: list[tuple[int, int, int, bytes]] = []
        self._pos = 8  # next free offset (header is 8 bytes)

    def add_block(self, blob: bytes) -> int:
        """Store a data block, returning its absolute file offset."""
        offset = self._pos
        self._blocks.append(blob)
        self._pos += len(blob)
        return offset

    def add_field(self, tag: int, type_id: int, values) -> None:
        letter, size = _FIELD_TYPES[type_id]
        if type_id == 2:
            payload = values.encode("latin-1") + b"\0"
            count = len(payload)
        else:
            values = tuple(values)
            count = len(values)
            payload = struct.pack(f"<{count}{letter}", *values)
        self._entries.append((tag, type_id, count, payload))

    def tobytes(self) -> bytes:
        # out-of-line values live between the data blocks and the IFD
        entries = sorted(self._entries)
        value_blobs: list[bytes] = []
        packed: list[bytes] = []
        pos = self._pos
        for tag, type_id, count, payload in entries:
            if len(payload) <= 4:
                inline = payload + b"\0" * (4 - len(payload))
                packed.append(struct.pack("<HHI", tag, type_id, count) + inline)
            else:
                if pos % 2:  # TIFF values must start on a word boundary
                    value_blobs.append(b"\0")
                    pos += 1
                packed.append(struct.pack("<HHII", tag, type_id, count, pos))
                value_blobs.append(payload)
                pos += len(payload)
        ifd_offset = pos + (pos % 2)
        header = struct.pack("<2sHI", b"II", 42, ifd_offset)
        ifd = struct.pack("<H", len(packed)) + b"".join(packed) + struct.pack("<I", 0)
        pad = b"\0" * (ifd_offset - pos)
        return header + b"".join(self._blocks) + b"".join(value_blobs) + pad + ifd
