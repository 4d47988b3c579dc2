"""Georeferenced 16-bit grids: the ABG1 binary format, ESRI ASCII interop
and exclusion masks.

Cells are square in degrees (EPSG:4326). Row 0 is the northern edge and
column 0 the western edge; ``origin`` is the upper-left corner, so the
centre of cell ``(i, j)`` is ``(origin_lon + (j + 0.5) * cs,
origin_lat - (i + 0.5) * cs)``.

ABG1 layout (little-endian)::

    magic 4s "ABG1" | width u32 | height u32 | origin_lon f64 | origin_lat f64
    | cell_size f64 | band_kind u8 | mi_kind u8 | quant_scale f32 | nodata u16
    | width*height u16 codes, row-major from the north-west corner
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

from .curves import NODATA, decode_ab, encode_ab
from .errors import BadMagic, GridMismatch, HeaderInconsistent, MalformedHeader, RaggedRows, TruncatedFile

log = logging.getLogger(__name__)

MAGIC = b"ABG1"
HEADER = struct.Struct("<4sIIdddBBfH")
DEFAULT_CELL = 0.000833
CRS = "EPSG:4326"
MI_NONE = 255


class BandKind(IntEnum):
    A = 0
    B = 1
    CLASS = 2
    MI = 3
    PGF = 4
    PGA = 5
    PGA_M = 6


DEFAULT_SCALE = {
    BandKind.A: 0.01,
    BandKind.B: 0.01,
    BandKind.CLASS: 1.0,
    BandKind.MI: 0.01,
    BandKind.PGF: 1e-4,
    BandKind.PGA: 1e-3,
    BandKind.PGA_M: 1e-3,
}


def _f32(x: float) -> float:
    """The float64 nearest to the shortest decimal form of ``float32(x)``."""
    return float(str(np.float32(x)))


@dataclass(frozen=True)
class Geometry:
    width: int
    height: int
    origin_lon: float
    origin_lat: float
    cell_size: float = DEFAULT_CELL

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("raster dimensions must be positive")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be > 0")

    @property
    def shape(self):
        return (self.height, self.width)

    def coord_of(self, i, j):
        """Cell-centre (lon, lat) of row ``i``, column ``j``."""
        i = np.asarray(i, dtype=float)
        j = np.asarray(j, dtype=float)
        return self.origin_lon + (j + 0.5) * self.cell_size, self.origin_lat - (i + 0.5) * self.cell_size

    def cell_of(self, lon, lat):
        """(row, col) containing a coordinate; may fall outside the grid."""
        j = np.floor((np.asarray(lon, float) - self.origin_lon) / self.cell_size).astype(np.int64)
        i = np.floor((self.origin_lat - np.asarray(lat, float)) / self.cell_size).astype(np.int64)
        return i, j

    def centers(self):
        """Cell-centre lon and lat, each of shape (height, width)."""
        ii, jj = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        return self.coord_of(ii, jj)

    @property
    def bounds(self):
        """(lon_min, lat_min, lon_max, lat_max) of the cell edges."""
        return (
            self.origin_lon,
            self.origin_lat - self.height * self.cell_size,
            self.origin_lon + self.width * self.cell_size,
            self.origin_lat,
        )

    def aligned(self, other: "Geometry", tol=1e-9) -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and abs(self.origin_lon - other.origin_lon) <= tol * max(1.0, self.cell_size)
            and abs(self.origin_lat - other.origin_lat) <= tol * max(1.0, self.cell_size)
            and abs(self.cell_size - other.cell_size) <= tol * self.cell_size
        )


@dataclass(frozen=True, eq=False)
class AbRaster:
    width: int
    height: int
    origin_lon: float
    origin_lat: float
    cell_size: float
    values: np.ndarray  # uint16, (height, width)
    band_kind: BandKind = BandKind.A
    mi_kind: int = MI_NONE
    quant_scale: float = 0.01
    nodata: int = NODATA
    crs: str = CRS
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.size != self.width * self.height:
            raise HeaderInconsistent(f"{v.size} values for a {self.width}x{self.height} raster")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be > 0")
        v = np.ascontiguousarray(v.reshape(self.height, self.width), dtype=np.uint16)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "band_kind", BandKind(self.band_kind))
        object.__setattr__(self, "quant_scale", _f32(self.quant_scale))

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.width, self.height, self.origin_lon, self.origin_lat, self.cell_size)

    @property
    def mask(self) -> np.ndarray:
        """True where a cell holds data."""
        return self.values != self.nodata

    def decoded(self) -> np.ndarray:
        """Float values with NaN at nodata."""
        out = self.values.astype(float) * self.quant_scale
        out[~self.mask] = np.nan
        return out

    @classmethod
    def from_float(cls, data, geometry: Geometry, band_kind=BandKind.A, mi_kind=MI_NONE, scale=None, **kw):
        band_kind = BandKind(band_kind)
        scale = _f32(DEFAULT_SCALE[band_kind] if scale is None else scale)
        codes = encode_ab(np.asarray(data, dtype=float), scale)
        return cls(
            geometry.width,
            geometry.height,
            float(geometry.origin_lon),
            float(geometry.origin_lat),
            float(geometry.cell_size),
            codes,
            band_kind,
            int(mi_kind),
            scale,
            **kw,
        )

    def with_values(self, codes) -> "AbRaster":
        return replace(self, values=codes)

    def identical(self, other: "AbRaster") -> bool:
        """Bitwise equality of header fields and payload."""
        return (
            header_tuple(self) == header_tuple(other)
            and self.values.dtype == other.values.dtype
            and self.values.tobytes() == other.values.tobytes()
        )

    def __eq__(self, other):
        if not isinstance(other, AbRaster):
            return NotImplemented
        return self.identical(other)

    __hash__ = None


def header_tuple(r: AbRaster):
    return (
        MAGIC,
        r.width,
        r.height,
        r.origin_lon,
        r.origin_lat,
        r.cell_size,
        int(r.band_kind),
        int(r.mi_kind),
        r.quant_scale,
        r.nodata,
    )


# ---------------------------------------------------------------------------
# ABG1
# ---------------------------------------------------------------------------

def to_bytes(r: AbRaster) -> bytes:
    return HEADER.pack(*header_tuple(r)) + r.values.astype("<u2").tobytes()


def from_bytes(data: bytes) -> AbRaster:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"not an ABG1 file (magic {bytes(data[:4])!r})")
    if len(data) < HEADER.size:
        raise TruncatedFile(f"header needs {HEADER.size} bytes, file has {len(data)}")
    _, w, h, lon, lat, cs, kind, mi, scale, nodata = HEADER.unpack_from(data)
    if w == 0 or h == 0 or not cs > 0 or not math.isfinite(cs):
        raise HeaderInconsistent(f"invalid geometry {w}x{h}, cell {cs}")
    if not np.isfinite(scale) or scale <= 0:
        raise HeaderInconsistent(f"invalid quantization scale {scale}")
    try:
        kind = BandKind(kind)
    except ValueError as exc:
        raise HeaderInconsistent(f"unknown band kind {kind}") from exc
    need = HEADER.size + 2 * w * h
    if len(data) < need:
        raise TruncatedFile(f"payload needs {need} bytes, file has {len(data)}")
    if len(data) > need:
        raise HeaderInconsistent(f"{len(data) - need} trailing bytes after payload")
    codes = np.frombuffer(data, dtype="<u2", count=w * h, offset=HEADER.size).astype(np.uint16)
    return AbRaster(w, h, lon, lat, cs, codes, kind, mi, float(str(np.float32(scale))), nodata)


def write_abgrid(r: AbRaster, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(r))
    tmp.replace(path)
    return path


def read_abgrid(path) -> AbRaster:
    return from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# ESRI ASCII grid
# ---------------------------------------------------------------------------

ASC_NODATA = -9999.0
_ASC_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter", "cellsize", "nodata_value")


def import_ascii_grid(path, band_kind=BandKind.A, mi_kind=MI_NONE, scale=None) -> AbRaster:
    lines = Path(path).read_text().splitlines()
    header = {}
    pos = 0
    while pos < len(lines):
        parts = lines[pos].split()
        if not parts:
            pos += 1
            continue
        key = parts[0].lower()
        if key not in _ASC_KEYS:
            break
        if len(parts) != 2:
            raise MalformedHeader(f"bad header line {lines[pos]!r}")
        try:
            header[key] = float(parts[1])
        except ValueError as exc:
            raise MalformedHeader(f"non-numeric header value in {lines[pos]!r}") from exc
        pos += 1
    for k in ("ncols", "nrows", "cellsize"):
        if k not in header:
            raise MalformedHeader(f"missing {k}")
    ncols, nrows, cs = int(header["ncols"]), int(header["nrows"]), header["cellsize"]
    if ncols != header["ncols"] or nrows != header["nrows"] or ncols < 1 or nrows < 1 or not cs > 0:
        raise MalformedHeader("ncols/nrows must be positive integers and cellsize > 0")
    if "xllcorner" in header and "yllcorner" in header:
        xll, yll = header["xllcorner"], header["yllcorner"]
    elif "xllcenter" in header and "yllcenter" in header:
        xll, yll = header["xllcenter"] - cs / 2, header["yllcenter"] - cs / 2
    else:
        raise MalformedHeader("need xllcorner/yllcorner or xllcenter/yllcenter")
    nodata_value = header.get("nodata_value", ASC_NODATA)

    rows = [ln.split() for ln in lines[pos:] if ln.strip()]
    if len(rows) != nrows:
        raise RaggedRows(f"expected {nrows} rows, found {len(rows)}")
    for k, r in enumerate(rows):
        if len(r) != ncols:
            raise RaggedRows(f"row {k} has {len(r)} values, expected {ncols}")
    data = np.array(rows, dtype=float)
    data[data == nodata_value] = np.nan
    geom = Geometry(ncols, nrows, xll, yll + nrows * cs, cs)
    return AbRaster.from_float(data, geom, band_kind, mi_kind, scale)


def export_ascii_grid(r: AbRaster, path) -> Path:
    path = Path(path)
    d = r.decoded()
    lines = [
        f"ncols {r.width}",
        f"nrows {r.height}",
        f"xllcorner {r.origin_lon!r}",
        f"yllcorner {r.origin_lat - r.height * r.cell_size!r}",
        f"cellsize {r.cell_size!r}",
        f"NODATA_value {ASC_NODATA:g}",
    ]
    for row in d:
        lines.append(" ".join(f"{ASC_NODATA:g}" if math.isnan(v) else f"{v:.6g}" for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Mask:
    """Boolean exclusion grid; True cells are excluded."""

    geometry: Geometry | None
    data: np.ndarray

    def on(self, target: Geometry) -> np.ndarray:
        data = np.asarray(self.data, bool)
        if self.geometry is None:
            if data.shape != target.shape:
                raise GridMismatch(f"mask shape {data.shape} != raster shape {target.shape}")
            return data
        if self.geometry.aligned(target):
            return data.reshape(target.shape)
        return resample_nearest(data, self.geometry, target, fill=False)


@dataclass
class MaskSet:
    """Named exclusion masks, e.g. slope, lakes, glaciers, ice sheet, permafrost."""

    masks: dict = field(default_factory=dict)

    def add(self, name: str, mask) -> "MaskSet":
        if not isinstance(mask, Mask):
            mask = Mask(None, np.asarray(mask, bool))
        self.masks[name] = mask
        return self

    def combined(self, target: Geometry) -> np.ndarray:
        out = np.zeros(target.shape, bool)
        for m in self.masks.values():
            out |= m.on(target)
        return out


def resample_nearest(data, source: Geometry, target: Geometry, fill=np.nan):
    """Value of the source cell containing each target cell centre."""
    lon, lat = target.centers()
    i, j = source.cell_of(lon, lat)
    inside = (i >= 0) & (i < source.height) & (j >= 0) & (j < source.width)
    data = np.asarray(data)
    out = np.full(target.shape, fill, dtype=np.result_type(data.dtype, np.asarray(fill).dtype))
    out[inside] = data.reshape(source.shape)[i[inside], j[inside]]
    return out


def slope_mask(slope: AbRaster, threshold_deg: float = 5.0) -> Mask:
    """Exclude cells with slope >= threshold; slope nodata cells are excluded too."""
    s = slope.decoded()
    return Mask(slope.geometry, ~(s < threshold_deg))


def apply_masks(r: AbRaster, masks: MaskSet | None) -> AbRaster:
    if masks is None or not masks.masks:
        return r
    excluded = masks.combined(r.geometry)
    codes = np.where(excluded, r.nodata, r.values).astype(np.uint16)
    return r.with_values(codes)


def describe(r: AbRaster) -> dict:
    d = r.decoded()
    valid = np.isfinite(d)
    info = {
        "width": r.width,
        "height": r.height,
        "origin_lon": r.origin_lon,
        "origin_lat": r.origin_lat,
        "cell_size": r.cell_size,
        "band_kind": r.band_kind.name,
        "mi_kind": r.mi_kind,
        "quant_scale": r.quant_scale,
        "nodata_cells": int((~valid).sum()),
    }
    if valid.any():
        info.update(min=float(d[valid].min()), max=float(d[valid].max()), mean=float(d[valid].mean()))
    return info
