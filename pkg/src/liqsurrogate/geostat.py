"""Regression kriging of response-curve residuals.

Residuals are ``observed - predicted`` at CPT sites, i.e. the correction
that is added back onto the model raster. Spatial structure is described
by the stable semivariogram::

    gamma(h) = b + c0 * (1 - exp(-(h / r) ** alpha))

and residuals are interpolated by simple kriging with a known zero mean.
Distances are chord lengths between Earth-centred Cartesian points, which
equal great-circle distances to well under a millimetre at kriging scales.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from .curves import MAX_VALUE
from .errors import CrsMismatch, FitNonConvergence, NonPositiveSill, SingularSystem, TooFewBins, TooFewStations
from .raster import CRS, AbRaster, BandKind
from .surrogate.features import chord_for, ecef

log = logging.getLogger(__name__)

NEIGHBORHOOD_M = 3000.0
PREDICTION_M = 1200.0
BIN_WIDTH_M = 150.0
JITTER = 1e-10
CLASS_EDGES = (0.05, 0.5, 0.95)


@dataclass(frozen=True)
class SemivariogramModel:
    b: float = 0.0
    c0: float = 1.0
    r: float = 1000.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("nugget must be >= 0")
        if not self.c0 > 0:
            raise NonPositiveSill(f"sill must be > 0, got {self.c0}")
        if not self.r > 0:
            raise ValueError("range must be > 0")
        if not 0 < self.alpha <= 2:
            raise ValueError("alpha must lie in (0, 2]")

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        g = self.b + self.c0 * (1.0 - np.exp(-((h / self.r) ** self.alpha)))
        return g if g.ndim else float(g)

    def covariance(self, h):
        """C(h) = (b + c0) - gamma(h) for h > 0, and b + c0 at h = 0."""
        h = np.asarray(h, dtype=float)
        total = self.b + self.c0
        return np.where(h > 0, total - self(h), total)


@dataclass(frozen=True)
class Bins:
    h: np.ndarray  # mean separation of the pairs in each bin, m
    gamma: np.ndarray
    count: np.ndarray
    max_h: float


@dataclass(frozen=True, eq=False)
class ResidualField:
    lon: np.ndarray
    lat: np.ndarray
    residual: np.ndarray
    model: SemivariogramModel
    neighborhood_radius: float = NEIGHBORHOOD_M
    prediction_radius: float = PREDICTION_M
    site_id: tuple = ()
    crs: str = CRS

    def __post_init__(self):
        for name in ("lon", "lat", "residual"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not (len(self.lon) == len(self.lat) == len(self.residual)):
            raise ValueError("lon, lat and residual must have equal length")
        if not np.all(np.isfinite(self.residual)):
            raise ValueError("residuals must be finite")

    def __len__(self):
        return len(self.residual)


def empirical_semivariogram(lon, lat, values, bin_width=BIN_WIDTH_M, max_h=NEIGHBORHOOD_M) -> Bins:
    """Binned semivariance of all station pairs with separation <= max_h.

    Bin k covers ``(k*w, (k+1)*w]``; pairs at zero separation fall in the
    first bin. Empty bins are omitted.
    """
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        raise TooFewStations("need at least 2 stations")
    xyz = ecef(lon, lat)
    tree = cKDTree(xyz)
    pairs = tree.query_pairs(float(chord_for(max_h)) * (1 + 1e-12), output_type="ndarray")
    n_bins = int(np.ceil(max_h / bin_width - 1e-9))
    if len(pairs) == 0:
        return Bins(np.zeros(0), np.zeros(0), np.zeros(0, np.int64), float(max_h))
    i, j = pairs[:, 0], pairs[:, 1]
    h = np.linalg.norm(xyz[i] - xyz[j], axis=1)
    keep = h <= max_h
    i, j, h = i[keep], j[keep], h[keep]
    k = np.clip(np.ceil(h / bin_width).astype(np.int64) - 1, 0, n_bins - 1)
    sq = (values[i] - values[j]) ** 2
    count = np.bincount(k, minlength=n_bins)
    ssum = np.bincount(k, weights=sq, minlength=n_bins)
    hsum = np.bincount(k, weights=h, minlength=n_bins)
    ok = count > 0
    return Bins(hsum[ok] / count[ok], ssum[ok] / (2.0 * count[ok]), count[ok], float(max_h))


def fit_stable(bins: Bins, fix_nugget_zero: bool = True) -> SemivariogramModel:
    """Pair-count weighted least-squares fit of the stable model."""
    h = np.asarray(bins.h, float)
    g = np.asarray(bins.gamma, float)
    w = np.sqrt(np.asarray(bins.count, float))
    if len(h) < 4:
        raise TooFewBins(f"need >= 4 nonempty bins, got {len(h)}")
    gmax = float(g.max())
    if not gmax > 0:
        raise NonPositiveSill("all semivariances are zero")
    r_hi = 2.0 * bins.max_h

    def unpack(p):
        if fix_nugget_zero:
            return 0.0, p[0], p[1], p[2]
        return p[3], p[0], p[1], p[2]

    def resid(p):
        b, c0, r, a = unpack(p)
        return w * (b + c0 * (1.0 - np.exp(-((h / r) ** a))) - g)

    lo = [1e-12 * gmax, 1e-6 * r_hi, 1e-3]
    hi = [10.0 * gmax, r_hi, 2.0]
    if not fix_nugget_zero:
        lo.append(0.0)
        hi.append(gmax)
    best = None
    for r0 in (0.1 * bins.max_h, 0.3 * bins.max_h, bins.max_h):
        for a0 in (0.5, 1.0, 1.8):
            x0 = [gmax, r0, a0] + ([0.0] if not fix_nugget_zero else [])
            try:
                sol = least_squares(resid, x0, bounds=(lo, hi), method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=5000)
            except (ValueError, FloatingPointError):
                continue
            if sol.status > 0 and (best is None or sol.cost < best.cost):
                best = sol
    if best is None:
        raise FitNonConvergence("semivariogram fit did not converge")
    b, c0, r, a = unpack(best.x)
    return SemivariogramModel(float(b), float(c0), float(r), float(a))


def _weights(model: SemivariogramModel, sxyz, qxyz):
    """Simple-kriging weights for queries sharing one station set.

    Returns ``(weights (m, n), variance (m,))``.
    """
    d_ss = np.linalg.norm(sxyz[:, None, :] - sxyz[None, :, :], axis=-1)
    K = model.covariance(d_ss)
    d_qs = np.linalg.norm(qxyz[:, None, :] - sxyz[None, :, :], axis=-1)
    k = model.covariance(d_qs)
    try:
        fac = cho_factor(K, lower=True, check_finite=False)
    except LinAlgError:
        try:
            fac = cho_factor(K + JITTER * model.c0 * np.eye(len(K)), lower=True, check_finite=False)
        except LinAlgError as exc:
            raise SingularSystem("kriging matrix not positive definite after jitter") from exc
    lam = cho_solve(fac, k.T, check_finite=False).T
    total = model.b + model.c0
    var = total - np.einsum("ij,ij->i", lam, k)
    # exact hits: the weight vector is the unit vector for that station
    hit = d_qs == 0
    rows = hit.any(axis=1)
    if rows.any():
        lam[rows] = hit[rows] / hit[rows].sum(axis=1, keepdims=True)
        var[rows] = 0.0
    return lam, np.clip(var, 0.0, total)


def krige_many(field: ResidualField, lon, lat, return_support=False):
    """Kriged residual and variance at many query points.

    With ``return_support`` a third array flags queries having at least
    one station within the prediction radius.
    """
    lon = np.atleast_1d(np.asarray(lon, float))
    lat = np.atleast_1d(np.asarray(lat, float))
    total = field.model.b + field.model.c0
    est = np.zeros(len(lon))
    var = np.full(len(lon), total)
    support = np.zeros(len(lon), bool)
    if len(field) == 0 or len(lon) == 0:
        return (est, var, support) if return_support else (est, var)
    sxyz = ecef(field.lon, field.lat)
    qxyz = ecef(lon, lat)
    tree = cKDTree(sxyz)
    # chord slightly enlarged so a station exactly on the radius is kept
    near = tree.query_ball_point(qxyz, r=float(chord_for(field.prediction_radius)) * (1 + 1e-12))
    groups = {}
    for q, idx in enumerate(near):
        if idx:
            groups.setdefault(tuple(sorted(idx)), []).append(q)
    for idx, qs in groups.items():
        sidx = np.array(idx)
        qs = np.array(qs)
        lam, v = _weights(field.model, sxyz[sidx], qxyz[qs])
        est[qs] = lam @ field.residual[sidx]
        var[qs] = v
        support[qs] = True
    return (est, var, support) if return_support else (est, var)


def krige_residual(field: ResidualField, lon: float, lat: float):
    est, var = krige_many(field, [lon], [lat])
    return float(est[0]), float(var[0])


def variance_class(variance, c0):
    if not c0 > 0:
        raise NonPositiveSill(f"sill must be > 0, got {c0}")
    rho = np.clip(np.asarray(variance, dtype=float) / c0, 0.0, 1.0)
    cls = np.digitize(rho, CLASS_EDGES, right=False)
    return cls.astype(np.uint8) if cls.ndim else int(cls)


def update_raster(ab: AbRaster, field: ResidualField):
    """Add kriged residuals to an A or B raster.

    Returns ``(updated raster, class raster)``. Nodata cells stay nodata;
    cells beyond the prediction radius of every station keep their codes.
    """
    if getattr(ab, "crs", CRS) != field.crs:
        raise CrsMismatch(f"raster CRS {ab.crs} != station CRS {field.crs}")
    geom = ab.geometry
    lon, lat = geom.centers()
    est, var, near = krige_many(field, lon.ravel(), lat.ravel(), return_support=True)
    est = est.reshape(geom.shape)
    var = var.reshape(geom.shape)
    near = near.reshape(geom.shape)
    valid = ab.mask
    values = ab.decoded()
    upd = np.clip(values + est, 0.0, MAX_VALUE)
    codes = ab.values.copy()
    sel = valid & near
    new = AbRaster.from_float(upd, geom, ab.band_kind, ab.mi_kind, ab.quant_scale).values
    codes[sel] = new[sel]
    classes = variance_class(var, field.model.c0)
    cls_raster = AbRaster(
        geom.width,
        geom.height,
        geom.origin_lon,
        geom.origin_lat,
        geom.cell_size,
        classes.astype(np.uint16),
        BandKind.CLASS,
        ab.mi_kind,
        1.0,
    )
    return ab.with_values(codes), cls_raster


# ---------------------------------------------------------------------------
# station CSV: site_id,lon,lat,residual
# ---------------------------------------------------------------------------

def read_stations(path):
    ids, lon, lat, res = [], [], [], []
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["site_id"])
            lon.append(float(row["lon"]))
            lat.append(float(row["lat"]))
            res.append(float(row["residual"]))
    return tuple(ids), np.array(lon), np.array(lat), np.array(res)


def write_stations(path, site_ids, lon, lat, residual):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "lon", "lat", "residual"])
        for row in zip(site_ids, lon, lat, residual):
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])


def field_from_stations(site_ids, lon, lat, residual, model=None, fix_nugget_zero=True, **kw) -> ResidualField:
    """Build a residual field, fitting the semivariogram when no model is given."""
    if model is None:
        bins = empirical_semivariogram(lon, lat, residual, max_h=kw.get("neighborhood_radius", NEIGHBORHOOD_M))
        model = fit_stable(bins, fix_nugget_zero)
    return ResidualField(lon, lat, residual, model, site_id=tuple(site_ids), **kw)
