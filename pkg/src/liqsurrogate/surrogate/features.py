"""Feature schemas, training sets and the data-preparation steps applied
before tree training: nearest-neighbour imputation, spatial density
weighting and groundwater augmentation."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ..errors import NoValidSample, SchemaMissingGwt, SchemaMismatch

EARTH_RADIUS_M = 6_371_008.8
GWT_FEATURE = "gwt_depth"
TABLE_KEYS = ("site_id", "lon", "lat")


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple
    gwt_feature: str = GWT_FEATURE

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate feature names")

    @property
    def schema_id(self) -> str:
        return hashlib.sha256("\x1f".join(self.names).encode()).hexdigest()[:16]

    def index(self, name) -> int:
        return self.names.index(name)

    def __len__(self):
        return len(self.names)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    schema_id: str

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Row-aligned arrays. ``group`` ties synthetic duplicates to their source row."""

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    synthetic: np.ndarray
    group: np.ndarray
    site_id: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.y)
        X = np.asarray(self.X, dtype=float).reshape(n, -1)
        if X.shape[1] != len(self.schema):
            raise SchemaMismatch(f"{X.shape[1]} feature columns for a {len(self.schema)}-feature schema")
        w = np.asarray(self.weight, dtype=float)
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and >= 0")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "weight", w)
        for name, dtype in (("lon", float), ("lat", float), ("synthetic", bool), ("group", np.int64)):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=dtype))
        ids = tuple(self.site_id) if len(self.site_id) else tuple(str(i) for i in range(n))
        object.__setattr__(self, "site_id", ids)

    @classmethod
    def build(cls, schema, X, y, lon, lat, weight=None, site_id=()):
        n = len(y)
        return cls(
            schema=schema,
            X=X,
            y=y,
            weight=np.ones(n) if weight is None else weight,
            lon=lon,
            lat=lat,
            synthetic=np.zeros(n, bool),
            group=np.arange(n),
            site_id=site_id,
        )

    def __len__(self):
        return len(self.y)

    def subset(self, rows) -> "TrainingSet":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return replace(
            self,
            X=self.X[rows],
            y=self.y[rows],
            weight=self.weight[rows],
            lon=self.lon[rows],
            lat=self.lat[rows],
            synthetic=self.synthetic[rows],
            group=self.group[rows],
            site_id=tuple(self.site_id[i] for i in rows),
        )

    def with_target(self, y) -> "TrainingSet":
        return replace(self, y=np.asarray(y, dtype=float))

    def with_weight(self, weight) -> "TrainingSet":
        return replace(self, weight=np.asarray(weight, dtype=float))


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def ecef(lon, lat, radius=EARTH_RADIUS_M):
    """Unit-sphere-scaled Cartesian coordinates (m) for chord-distance queries."""
    lo = np.radians(np.asarray(lon, dtype=float))
    la = np.radians(np.asarray(lat, dtype=float))
    c = np.cos(la)
    return np.stack([radius * c * np.cos(lo), radius * c * np.sin(lo), radius * np.sin(la)], axis=-1)


def chord_for(arc_m, radius=EARTH_RADIUS_M):
    """Chord length subtending a great-circle arc of ``arc_m`` metres."""
    return 2.0 * radius * np.sin(np.minimum(np.asarray(arc_m, float) / radius, math.pi) / 2.0)


def arc_for(chord_m, radius=EARTH_RADIUS_M):
    return 2.0 * radius * np.arcsin(np.clip(np.asarray(chord_m, float) / (2.0 * radius), 0.0, 1.0))


def haversine(lon1, lat1, lon2, lat2, radius=EARTH_RADIUS_M):
    lo1, la1, lo2, la2 = (np.radians(np.asarray(v, dtype=float)) for v in (lon1, lat1, lon2, lat2))
    a = np.sin((la2 - la1) / 2) ** 2 + np.cos(la1) * np.cos(la2) * np.sin((lo2 - lo1) / 2) ** 2
    return 2.0 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


# ---------------------------------------------------------------------------
# preparation steps
# ---------------------------------------------------------------------------

def impute_nearest(values, lon, lat, query_lon, query_lat, query_values=None):
    """Fill missing (NaN) features of a query point from the nearest valid sample.

    Parameters
    ----------
    values : (n, p) array
        Sparse samples, NaN where a feature is unavailable.
    lon, lat : (n,) arrays
        Sample locations in degrees.
    query_lon, query_lat : float
        Query location.
    query_values : (p,) array, optional
        The query's own features; only its NaN entries are filled. If
        omitted every feature is taken from the samples.

    Ties in great-circle distance go to the lowest sample index.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    p = values.shape[1]
    out = np.full(p, np.nan) if query_values is None else np.array(query_values, dtype=float)
    missing = np.flatnonzero(np.isnan(out))
    if len(missing) == 0:
        return out
    dist = haversine(lon, lat, query_lon, query_lat)
    order = np.lexsort((np.arange(len(dist)), dist))
    for j in missing:
        col = values[order, j]
        ok = np.flatnonzero(~np.isnan(col))
        if len(ok) == 0:
            raise NoValidSample(f"feature {j} has no valid sample")
        out[j] = col[ok[0]]
    return out


def impute_table(values, lon, lat):
    """Impute every NaN of a feature table from the nearest other row holding that feature."""
    values = np.array(values, dtype=float)
    lon = np.asarray(lon, float)
    lat = np.asarray(lat, float)
    for j in range(values.shape[1]):
        col = values[:, j]
        bad = np.flatnonzero(np.isnan(col))
        if len(bad) == 0:
            continue
        good = np.flatnonzero(~np.isnan(col))
        if len(good) == 0:
            raise NoValidSample(f"feature column {j} has no valid sample")
        for r in bad:
            # argmin returns the first minimum, i.e. the lowest donor index
            d = haversine(lon[good], lat[good], lon[r], lat[r])
            col[r] = col[good[np.argmin(d)]]
    return values


def density_weights(lon, lat, radius=1000.0, floor=0.5):
    """Inverse spatial-density weights.

    ``w_i = max(floor, median(count) / count_i)`` where ``count_i`` is the
    number of points (itself included) within ``radius`` metres of point
    ``i``; the weights are then rescaled to mean 1.
    """
    if not radius > 0:
        raise ValueError("radius must be > 0")
    lon = np.atleast_1d(np.asarray(lon, float))
    if len(lon) == 0:
        return np.zeros(0)
    xyz = ecef(lon, lat)
    tree = cKDTree(xyz)
    counts = np.asarray(tree.query_ball_point(xyz, r=float(chord_for(radius)), return_length=True), dtype=float)
    w = np.maximum(floor, np.median(counts) / counts)
    return w / w.mean()


def augment_groundwater(tset: TrainingSet, recompute, max_depth=50.0, seed=0) -> TrainingSet:
    """Append one synthetic copy of every row with a random groundwater depth.

    ``recompute(row_index, gwt) -> target`` re-runs mechanics and curve
    fitting for the source row under the new depth. Depths are drawn
    uniformly on ``(0, max_depth]``.
    """
    schema = tset.schema
    if schema.gwt_feature not in schema.names:
        raise SchemaMissingGwt(f"schema has no {schema.gwt_feature!r} feature")
    j = schema.index(schema.gwt_feature)
    n = len(tset)
    rng = np.random.default_rng(seed)
    gwt = max_depth * (1.0 - rng.random(n))
    X_new = tset.X.copy()
    X_new[:, j] = gwt
    y_new = np.array([float(recompute(i, float(g))) for i, g in enumerate(gwt)])
    return replace(
        tset,
        X=np.vstack([tset.X, X_new]),
        y=np.concatenate([tset.y, y_new]),
        weight=np.concatenate([tset.weight, tset.weight]),
        lon=np.concatenate([tset.lon, tset.lon]),
        lat=np.concatenate([tset.lat, tset.lat]),
        synthetic=np.concatenate([tset.synthetic, np.ones(n, bool)]),
        group=np.concatenate([tset.group, tset.group]),
        site_id=tset.site_id + tuple(f"{s}~gwt" for s in tset.site_id),
    )


# ---------------------------------------------------------------------------
# feature table CSV: site_id,lon,lat,<feature...>
# ---------------------------------------------------------------------------

def read_feature_table(path):
    """Returns ``(schema, site_ids, lon, lat, X)``; blank cells become NaN."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[:3]) != TABLE_KEYS:
            raise SchemaMismatch(f"feature table must start with columns {TABLE_KEYS}")
        rows = [r for r in reader if r]
    schema = FeatureSchema(tuple(header[3:]))
    ids = tuple(r[0] for r in rows)
    num = np.array([[float(v) if v.strip() else math.nan for v in r[1:]] for r in rows], dtype=float)
    num = num.reshape(len(rows), len(header) - 1)
    return schema, ids, num[:, 0], num[:, 1], num[:, 2:]


def write_feature_table(path, schema: FeatureSchema, site_ids, lon, lat, X):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_KEYS + schema.names)
        for sid, lo, la, row in zip(site_ids, lon, lat, np.asarray(X, float)):
            w.writerow([sid, repr(float(lo)), repr(float(la))] + ["" if math.isnan(v) else repr(float(v)) for v in row])
