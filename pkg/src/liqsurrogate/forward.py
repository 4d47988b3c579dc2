"""Event-time prediction from A/B rasters and a ShakeMap.

The chain per cell is PGA -> PGA_M = PGA / MSF(M) -> MI via the response
curve -> PGF via a lognormal (or tabulated) fragility function. All
intermediate arithmetic runs on float arrays with NaN as nodata; only the
written rasters are quantized.
"""

from __future__ import annotations

import json
import logging
import math
import urllib.request
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .curves import B_BOUNDS, curve_values
from .errors import ConfigError, DimensionMismatch, GridMismatch, KindMismatch, MalformedXml, MissingPgaField, NoOverlap
from .indices import MIKind
from .mechanics import msf
from .raster import MI_NONE, AbRaster, BandKind, Geometry, apply_masks, export_ascii_grid, write_abgrid

log = logging.getLogger(__name__)

PERCENT_G_UNITS = ("pctg", "%g", "percent_g", "pct_g")
_SNAP = 1e-9


# ---------------------------------------------------------------------------
# ShakeMap
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShakeGrid:
    """Regular ground-motion grid; row 0 is the northern edge (``lat_max``)."""

    event_id: str
    magnitude: float
    lon_min: float
    lat_min: float
    lon_max: float
    lat_max: float
    dlon: float
    dlat: float
    nlon: int
    nlat: int
    fields: dict  # name (upper case) -> (nlat, nlon) array
    units: dict = field(default_factory=dict)

    @property
    def pga(self) -> np.ndarray:
        return self.fields["PGA"]


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _find(root, name):
    for el in root.iter():
        if _local(el.tag) == name:
            return el
    return None


def _attr(el, name, conv=float):
    try:
        return conv(el.attrib[name])
    except KeyError as exc:
        raise MalformedXml(f"<{_local(el.tag)}> lacks attribute {name!r}") from exc
    except ValueError as exc:
        raise MalformedXml(f"<{_local(el.tag)}> attribute {name!r} is not numeric") from exc


def parse_shakemap(data) -> ShakeGrid:
    if isinstance(data, str):
        data = data.encode()
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedXml(f"not well-formed XML: {exc}") from exc
    if _local(root.tag) != "shakemap_grid":
        raise MalformedXml(f"root element is <{_local(root.tag)}>, expected <shakemap_grid>")
    event = _find(root, "event")
    spec = _find(root, "grid_specification")
    data_el = _find(root, "grid_data")
    if event is None or spec is None or data_el is None:
        raise MalformedXml("missing <event>, <grid_specification> or <grid_data>")

    declared = {}
    units = {}
    for el in root.iter():
        if _local(el.tag) != "grid_field":
            continue
        idx = _attr(el, "index", int)
        name = el.attrib.get("name", "").upper()
        if not name:
            raise MalformedXml("grid_field without a name")
        if idx < 1 or idx in declared.values() or name in declared:
            raise MalformedXml(f"duplicate or invalid grid_field index {idx} ({name})")
        declared[name] = idx
        units[name] = el.attrib.get("units", "").strip().lower()
    for need in ("LON", "LAT"):
        if need not in declared:
            raise MalformedXml(f"no {need} grid_field")
    if "PGA" not in declared:
        raise MissingPgaField("ShakeMap declares no PGA field")
    ncol = max(declared.values())
    if sorted(declared.values()) != list(range(1, ncol + 1)):
        raise MalformedXml("grid_field indices are not contiguous from 1")

    nlon = _attr(spec, "nlon", int)
    nlat = _attr(spec, "nlat", int)
    lon_min, lat_min = _attr(spec, "lon_min"), _attr(spec, "lat_min")
    lon_max, lat_max = _attr(spec, "lon_max"), _attr(spec, "lat_max")
    if nlon < 1 or nlat < 1:
        raise DimensionMismatch("nlon and nlat must be positive")
    dlon = (lon_max - lon_min) / (nlon - 1) if nlon > 1 else _attr(spec, "nominal_lon_spacing")
    dlat = (lat_max - lat_min) / (nlat - 1) if nlat > 1 else _attr(spec, "nominal_lat_spacing")

    try:
        flat = np.array((data_el.text or "").split(), dtype=float)
    except ValueError as exc:
        raise MalformedXml("non-numeric grid_data") from exc
    if flat.size % ncol:
        raise DimensionMismatch(f"grid_data has {flat.size} values, not a multiple of {ncol} fields")
    table = flat.reshape(-1, ncol)
    if len(table) != nlon * nlat:
        raise DimensionMismatch(f"grid_data has {len(table)} rows, grid_specification implies {nlon * nlat}")

    lon = table[:, declared["LON"] - 1]
    lat = table[:, declared["LAT"] - 1]
    col = np.rint((lon - lon_min) / dlon).astype(np.int64) if nlon > 1 else np.zeros(len(lon), np.int64)
    row = np.rint((lat_max - lat) / dlat).astype(np.int64) if nlat > 1 else np.zeros(len(lat), np.int64)
    if np.any((col < 0) | (col >= nlon) | (row < 0) | (row >= nlat)):
        raise DimensionMismatch("grid_data node outside grid_specification bounds")
    flat_idx = row * nlon + col
    if len(np.unique(flat_idx)) != len(flat_idx):
        raise DimensionMismatch("grid_data repeats a node")

    fields = {}
    for name, idx in declared.items():
        grid = np.empty(nlat * nlon)
        grid[flat_idx] = table[:, idx - 1]
        grid = grid.reshape(nlat, nlon)
        if name == "PGA" and units[name] in PERCENT_G_UNITS:
            grid = grid / 100.0
        fields[name] = grid
    if np.any(fields["PGA"] < 0):
        raise MalformedXml("negative PGA")
    if units["PGA"] in PERCENT_G_UNITS:
        units["PGA"] = "g"

    magnitude = _attr(event, "magnitude")
    event_id = event.attrib.get("event_id", event.attrib.get("id", ""))
    return ShakeGrid(event_id, magnitude, lon_min, lat_min, lon_max, lat_max, dlon, dlat, nlon, nlat, fields, units)


def fetch_bytes(source) -> bytes:
    """Read a local path or an http(s)/file URL."""
    text = str(source)
    if text.startswith(("http://", "https://", "file://")):
        with urllib.request.urlopen(text, timeout=60) as resp:  # noqa: S310 (user-supplied URL is the feature)
            return resp.read()
    return Path(text).read_bytes()


def load_shakemap(source, fetcher=fetch_bytes) -> ShakeGrid:
    return parse_shakemap(fetcher(source))


# ---------------------------------------------------------------------------
# cell-wise chain
# ---------------------------------------------------------------------------

def magnitude_scale(pga, magnitude):
    return np.asarray(pga, dtype=float) / msf(magnitude)


def _position(x, start, step, n):
    """Fractional node coordinate, snapped to knots within 1e-9 of a node."""
    f = (np.asarray(x, float) - start) / step
    r = np.rint(f)
    f = np.where(np.abs(f - r) < _SNAP, r, f)
    inside = (f >= 0) & (f <= n - 1)
    return f, inside


def bilinear(values, fx, fy):
    """Bilinear interpolation on a (ny, nx) array at fractional (fx, fy) node coordinates."""
    ny, nx = values.shape
    x0 = np.clip(np.floor(fx).astype(np.int64), 0, max(nx - 2, 0))
    y0 = np.clip(np.floor(fy).astype(np.int64), 0, max(ny - 2, 0))
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    tx = fx - x0
    ty = fy - y0
    v00, v01 = values[y0, x0], values[y0, x1]
    v10, v11 = values[y1, x0], values[y1, x1]
    # pure knots / edges take the node values untouched by zero weights
    top = np.where(tx == 0, v00, np.where(tx == 1, v01, (1 - tx) * v00 + tx * v01))
    bot = np.where(tx == 0, v10, np.where(tx == 1, v11, (1 - tx) * v10 + tx * v11))
    return np.where(ty == 0, top, np.where(ty == 1, bot, (1 - ty) * top + ty * bot))


def resample_shaking(grid: ShakeGrid, target: Geometry, name="PGA") -> np.ndarray:
    """Bilinear resampling of a ShakeMap field onto target cell centres; NaN outside."""
    lon, lat = target.centers()
    fx, in_x = _position(lon, grid.lon_min, grid.dlon, grid.nlon)
    fy, in_y = _position(lat, grid.lat_max, -grid.dlat, grid.nlat)
    inside = in_x & in_y
    if not inside.any():
        raise NoOverlap("target raster does not overlap the ShakeMap")
    out = np.full(target.shape, np.nan)
    out[inside] = bilinear(grid.fields[name], fx[inside], fy[inside])
    return out


def _check_pair(a: AbRaster, b: AbRaster):
    if not a.geometry.aligned(b.geometry):
        raise GridMismatch("A and B rasters are not aligned")
    if a.band_kind != BandKind.A or b.band_kind != BandKind.B:
        raise KindMismatch(f"expected A and B bands, got {a.band_kind.name} and {b.band_kind.name}")
    if a.mi_kind != b.mi_kind:
        raise KindMismatch(f"A is for MI kind {a.mi_kind}, B for {b.mi_kind}")


def apply_model(a: AbRaster, b: AbRaster, pga_m) -> np.ndarray:
    """Cell-wise response curve; NaN wherever any input is nodata."""
    _check_pair(a, b)
    if isinstance(pga_m, AbRaster):
        if not pga_m.geometry.aligned(a.geometry):
            raise GridMismatch("PGA_M raster is not aligned with A/B")
        pga_m = pga_m.decoded()
    pga_m = np.asarray(pga_m, dtype=float)
    if pga_m.shape != a.geometry.shape:
        raise GridMismatch(f"PGA_M shape {pga_m.shape} != raster shape {a.geometry.shape}")
    av, bv = a.decoded(), b.decoded()
    low_b = bv < B_BOUNDS[0]
    if np.any(low_b):
        log.info("apply_model: %d cells with B below %.2f raised to it", int(low_b.sum()), B_BOUNDS[0])
        bv = np.where(low_b, B_BOUNDS[0], bv)
    mi = curve_values(av, bv, pga_m)
    mi[np.isnan(av) | np.isnan(bv) | np.isnan(pga_m)] = np.nan
    return mi


# ---------------------------------------------------------------------------
# fragility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FragilityFunction:
    kind: MIKind
    median: float = math.nan
    beta: float = math.nan
    percentile: int = 50
    table: tuple | None = None  # ((mi, pgf), ...), piecewise linear in ln MI

    def __post_init__(self):
        object.__setattr__(self, "kind", MIKind.parse(self.kind))
        if self.table is None:
            if not (self.median > 0 and self.beta > 0):
                raise ConfigError("fragility needs median > 0 and beta > 0 (or a table)")
            return
        tab = tuple((float(m), float(p)) for m, p in self.table)
        mi = np.array([t[0] for t in tab])
        pg = np.array([t[1] for t in tab])
        if len(tab) < 2 or np.any(mi <= 0) or np.any(np.diff(mi) <= 0):
            raise ConfigError("fragility table needs >= 2 rows with strictly increasing MI > 0")
        if np.any(np.diff(pg) < 0) or pg.min() < 0 or pg.max() > 1:
            raise ConfigError("fragility table probabilities must be nondecreasing within [0, 1]")
        object.__setattr__(self, "table", tab)

    def __call__(self, mi):
        return pgf(mi, self)


def pgf(mi, frag: FragilityFunction, kind=None):
    """Probability of ground failure; 0 at MI = 0, NaN where MI is NaN."""
    if kind is not None and MIKind.parse(kind) != frag.kind:
        raise KindMismatch(f"fragility is for {frag.kind.value}, MI raster is {MIKind.parse(kind).value}")
    mi = np.asarray(mi, dtype=float)
    pos = mi > 0
    out = np.zeros(mi.shape)
    with np.errstate(divide="ignore"):
        ln = np.log(np.where(pos, mi, 1.0))
    if frag.table is None:
        out = np.where(pos, ndtr((ln - math.log(frag.median)) / frag.beta), 0.0)
    else:
        t_mi = np.log([t[0] for t in frag.table])
        t_p = np.array([t[1] for t in frag.table])
        out = np.where(pos, np.interp(ln, t_mi, t_p), 0.0)
    out = np.clip(out, 0.0, 1.0)
    out = np.where(np.isnan(mi), np.nan, out)
    return out if out.ndim else float(out)


def load_fragility(path) -> list:
    """Fragility config: one JSON object or a list of them."""
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read fragility config {path}: {exc}") from exc
    items = cfg if isinstance(cfg, list) else [cfg]
    out = []
    for item in items:
        if not isinstance(item, dict) or "kind" not in item:
            raise ConfigError("each fragility entry needs a 'kind'")
        try:
            out.append(
                FragilityFunction(
                    kind=item["kind"],
                    median=float(item.get("median", math.nan)),
                    beta=float(item.get("beta", math.nan)),
                    percentile=int(item.get("percentile", 50)),
                    table=tuple(map(tuple, item["table"])) if "table" in item else None,
                )
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad fragility entry {item}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# full event
# ---------------------------------------------------------------------------

def run_event(models, shakemap, fragilities, out_dir, ensemble=False, ascii=False, fetcher=fetch_bytes, masks=None):
    """Produce the PGA, PGA_M, MI and PGF rasters for one event.

    Parameters
    ----------
    models : list of (AbRaster, AbRaster)
        A/B pairs, one per MI kind, all on the same grid.
    shakemap : ShakeGrid, bytes, or a path/URL
    fragilities : list of FragilityFunction
        One per MI kind in ``models``.
    out_dir : path
    ensemble : bool
        Also write the cell-wise mean PGF over all kinds.

    Returns a dict of written paths keyed by output name.
    """
    if not models:
        raise ConfigError("no A/B models supplied")
    if isinstance(shakemap, ShakeGrid):
        grid = shakemap
    elif isinstance(shakemap, (bytes, bytearray)):
        grid = parse_shakemap(bytes(shakemap))
    else:
        grid = load_shakemap(shakemap, fetcher)
    by_kind = {f.kind: f for f in fragilities}
    geom = models[0][0].geometry
    for a, b in models:
        _check_pair(a, b)
        if not a.geometry.aligned(geom):
            raise GridMismatch("all A/B models must share one grid")
        kind = MIKind.from_code(a.mi_kind)
        if kind not in by_kind:
            raise ConfigError(f"no fragility function configured for {kind.value}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}

    def emit(name, raster):
        if masks is not None:
            raster = apply_masks(raster, masks)
        written[name] = write_abgrid(raster, out_dir / f"{name}.abg")
        if ascii:
            export_ascii_grid(raster, out_dir / f"{name}.asc")

    pga = resample_shaking(grid, geom)
    pga_m = magnitude_scale(pga, grid.magnitude)
    emit("pga", AbRaster.from_float(pga, geom, BandKind.PGA))
    emit("pga_m", AbRaster.from_float(pga_m, geom, BandKind.PGA_M))

    pgfs = []
    for a, b in models:
        kind = MIKind.from_code(a.mi_kind)
        mi = apply_model(a, b, pga_m)
        p = pgf(mi, by_kind[kind], kind)
        pgfs.append(p)
        emit(f"mi_{kind.value}", AbRaster.from_float(mi, geom, BandKind.MI, kind.code))
        emit(f"pgf_{kind.value}", AbRaster.from_float(p, geom, BandKind.PGF, kind.code))
    if ensemble:
        stack = np.stack(pgfs)
        mean = stack.sum(axis=0) / len(pgfs)
        emit("pgf_ensemble", AbRaster.from_float(mean, geom, BandKind.PGF, MI_NONE))
    log.info("event %s: wrote %d rasters to %s", grid.event_id, len(written), out_dir)
    return written
