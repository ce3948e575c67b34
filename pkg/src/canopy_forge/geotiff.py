"""GeoTIFF I/O for elevation grids and uint8 imagery.

The writer emits tiled (256x256) DEFLATE files with the georeferencing,
nodata and metadata tags GDAL expects, so outputs drop into standard GIS
tooling. The reader accepts strip or tile layouts with no or DEFLATE
compression and refuses anything it cannot represent losslessly.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
import zlib
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import _tiff as t
from .errors import IoFailure, MalformedFile, UnsupportedLayout
from .geo import DEFAULT_CRS, AffineTransform
from .grid import Grid, MultiSpectralImage, OpticalImage

TILE_SIZE = 256

#: metadata keys with contracted meaning; anything else round-trips untouched
KEY_ACQUISITION_YEAR = "ACQUISITION_YEAR"
KEY_ACQUISITION_YEAR_MEAN = "ACQUISITION_YEAR_MEAN"
KEY_SOURCE_TILE_COUNT = "SOURCE_TILE_COUNT"


def write_geotiff(obj, path, metadata: dict[str, str] | None = None) -> None:
    """Write a Grid / OpticalImage / MultiSpectralImage as a GeoTIFF.

    ``metadata`` entries are persisted as GDAL metadata items. Imagery
    objects automatically persist their acquisition year.
    """
    metadata = dict(metadata or {})
    if isinstance(obj, Grid):
        array = obj.values[:, :, np.newaxis]
        nodata = obj.nodata
    elif isinstance(obj, (OpticalImage, MultiSpectralImage)):
        array = np.moveaxis(obj.bands, 0, -1)
        nodata = None
        metadata.setdefault(KEY_ACQUISITION_YEAR, repr(float(obj.acquisition_year)))
    else:
        raise TypeError(f"cannot write {type(obj).__name__} as GeoTIFF")

    data = _encode(array, obj.transform, obj.crs_code, nodata, metadata)
    path = Path(path)
    try:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_geotiff(path) -> Grid | OpticalImage | MultiSpectralImage:
    """Read a GeoTIFF written by this package (or a compatible GDAL file).

    Single-band float rasters come back as :class:`Grid`; 3- and 5-band
    uint8 rasters as :class:`OpticalImage` / :class:`MultiSpectralImage`.
    """
    data = _read_bytes(path)
    ifd = t.read_ifd(data)
    array = t.read_image_array(data, ifd)
    transform = _parse_transform(ifd)
    crs = _parse_crs(ifd)
    meta = parse_metadata_items(ifd)

    h, w, spp = array.shape
    if spp == 1 and array.dtype.kind == "f":
        nodata = -9999.0
        if t.GDAL_NODATA in ifd:
            declared = float(ifd[t.GDAL_NODATA].values[0])
            # a NaN sentinel collapses onto ours: Grid normalizes all
            # non-finite cells to its own nodata value anyway
            if math.isfinite(declared):
                nodata = declared
        return Grid(transform, array[:, :, 0].astype(np.float32), nodata, crs)
    if spp in (3, 5) and array.dtype == np.uint8:
        year_text = meta.get(KEY_ACQUISITION_YEAR)
        if year_text is None:
            raise MalformedFile(f"{path}: imagery lacks {KEY_ACQUISITION_YEAR} metadata")
        bands = np.moveaxis(array, -1, 0)
        cls = OpticalImage if spp == 3 else MultiSpectralImage
        return cls(transform, bands, float(year_text), crs)
    raise UnsupportedLayout(f"{path}: {spp}-band {array.dtype} rasters are not supported")


def read_metadata(path) -> dict[str, str]:
    """Return the GDAL metadata items of a file without decoding pixels."""
    return parse_metadata_items(t.read_ifd(_read_bytes(path)))


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


# --- tag plumbing -----------------------------------------------------------


def _encode(array, transform, crs_code, nodata, metadata) -> bytes:
    h, w, spp = array.shape
    if array.dtype == np.float32:
        bits, fmt = 32, t.SAMPLEFORMAT_IEEEFP
    elif array.dtype == np.uint8:
        bits, fmt = 8, t.SAMPLEFORMAT_UINT
    else:
        raise TypeError(f"unsupported array dtype {array.dtype}")

    writer = t.TiffFileWriter()
    tiles_across = math.ceil(w / TILE_SIZE)
    tiles_down = math.ceil(h / TILE_SIZE)
    pad_value = nodata if nodata is not None else 0
    offsets, counts = [], []
    for tr in range(tiles_down):
        for tc in range(tiles_across):
            tile = np.full((TILE_SIZE, TILE_SIZE, spp), pad_value, dtype=array.dtype)
            r0, c0 = tr * TILE_SIZE, tc * TILE_SIZE
            r1, c1 = min(r0 + TILE_SIZE, h), min(c0 + TILE_SIZE, w)
            tile[: r1 - r0, : c1 - c0] = array[r0:r1, c0:c1]
            blob = _deflate(tile.tobytes())
            offsets.append(writer.add_block(blob))
            counts.append(len(blob))

    add = writer.add_field
    add(t.IMAGE_WIDTH, 4, [w])
    add(t.IMAGE_LENGTH, 4, [h])
    add(t.BITS_PER_SAMPLE, 3, [bits] * spp)
    add(t.COMPRESSION, 3, [t.COMPRESSION_DEFLATE])
    add(t.PHOTOMETRIC, 3, [1])  # MinIsBlack: no palette/RGB semantics implied
    add(t.SAMPLES_PER_PIXEL, 3, [spp])
    add(t.PLANAR_CONFIG, 3, [1])
    add(t.TILE_WIDTH, 3, [TILE_SIZE])
    add(t.TILE_LENGTH, 3, [TILE_SIZE])
    add(t.TILE_OFFSETS, 4, offsets)
    add(t.TILE_BYTE_COUNTS, 4, counts)
    add(t.SAMPLE_FORMAT, 3, [fmt] * spp)
    add(t.MODEL_PIXEL_SCALE, 12,
        [transform.pixel_size_x, abs(transform.pixel_size_y), 0.0])
    add(t.MODEL_TIEPOINT, 12,
        [0.0, 0.0, 0.0, transform.origin_x, transform.origin_y, 0.0])
    # version 1.1, three keys: projected model, pixel-is-area, EPSG code
    add(t.GEO_KEY_DIRECTORY, 3,
        [1, 1, 0, 3, 1024, 0, 1, 1, 1025, 0, 1, 1, 3072, 0, 1, crs_code])
    if metadata:
        add(t.GDAL_METADATA, 2, _metadata_xml(metadata))
    if nodata is not None:
        add(t.GDAL_NODATA, 2, repr(float(nodata)))
    return writer.tobytes()


def _deflate(raw: bytes) -> bytes:
    return zlib.compress(raw, 6)


def _metadata_xml(metadata: dict[str, str]) -> str:
    lines = ["<GDALMetadata>"]
    for key in sorted(metadata):
        lines.append(f'  <Item name="{escape(key, {chr(34): "&quot;"})}">'
                     f"{escape(str(metadata[key]))}</Item>")
    lines.append("</GDALMetadata>")
    return "\n".join(lines)


def parse_metadata_items(ifd) -> dict[str, str]:
    entry = ifd.get(t.GDAL_METADATA)
    if entry is None:
        return {}
    try:
        root = ET.fromstring(entry.values[0])
    except ET.ParseError as exc:
        raise MalformedFile(f"bad GDAL metadata XML: {exc}") from exc
    items = {}
    for item in root.iter("Item"):
        name = item.get("name")
        if name is not None:
            items[name] = item.text or ""
    return items


def _parse_transform(ifd) -> AffineTransform:
    if t.MODEL_TRANSFORMATION in ifd:
        m = ifd[t.MODEL_TRANSFORMATION].values
        if len(m) != 16:
            raise MalformedFile("model transformation must have 16 entries")
        if m[1] != 0.0 or m[4] != 0.0:
            raise UnsupportedLayout("rotated/skewed rasters are not supported")
        return AffineTransform(m[3], m[7], m[0], m[5])
    scale = ifd.get(t.MODEL_PIXEL_SCALE)
    tie = ifd.get(t.MODEL_TIEPOINT)
    if scale is None or tie is None:
        raise MalformedFile("file lacks georeferencing tags")
    sx, sy = scale.values[0], scale.values[1]
    # tiepoint maps raster (i, j) to world (x, y); normalize to pixel (0, 0)
    i, j, _, x, y = tie.values[0], tie.values[1], tie.values[2], tie.values[3], tie.values[4]
    return AffineTransform(x - i * sx, y + j * sy, sx, -sy)


def _parse_crs(ifd) -> int:
    entry = ifd.get(t.GEO_KEY_DIRECTORY)
    if entry is None:
        return DEFAULT_CRS
    keys = entry.values
    for pos in range(4, len(keys) - 3, 4):
        key_id, location, count, value = keys[pos : pos + 4]
        if key_id == 3072 and location == 0:
            return int(value)
    return DEFAULT_CRS


def write_rotated_fixture(path, width=2, height=2) -> None:
    """Emit a tiny GeoTIFF carrying a rotated model transformation.

    Only used by tests to exercise the UnsupportedLayout path; real data
    from this pipeline is always axis-aligned.
    """
    array = np.zeros((height, width, 1), dtype=np.float32)
    writer = t.TiffFileWriter()
    blob = _deflate(array.tobytes())
    offset = writer.add_block(blob)
    add = writer.add_field
    add(t.IMAGE_WIDTH, 4, [width])
    add(t.IMAGE_LENGTH, 4, [height])
    add(t.BITS_PER_SAMPLE, 3, [32])
    add(t.COMPRESSION, 3, [t.COMPRESSION_DEFLATE])
    add(t.PHOTOMETRIC, 3, [1])
    add(t.SAMPLES_PER_PIXEL, 3, [1])
    add(t.STRIP_OFFSETS, 4, [offset])
    add(t.ROWS_PER_STRIP, 4, [height])
    add(t.STRIP_BYTE_COUNTS, 4, [len(blob)])
    add(t.SAMPLE_FORMAT, 3, [t.SAMPLEFORMAT_IEEEFP])
    rot = [0.5, 0.2, 0.0, 100.0,
           0.2, -0.5, 0.0, 200.0,
           0.0, 0.0, 0.0, 0.0,
           0.0, 0.0, 0.0, 1.0]
    add(t.MODEL_TRANSFORMATION, 12, rot)
    Path(path).write_bytes(writer.tobytes())
