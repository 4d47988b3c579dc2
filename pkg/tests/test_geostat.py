import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liqsurrogate import geostat
from liqsurrogate.errors import CrsMismatch, NonPositiveSill, TooFewBins, TooFewStations
from liqsurrogate.geostat import (
    Bins,
    ResidualField,
    SemivariogramModel,
    empirical_semivariogram,
    fit_stable,
    krige_many,
    krige_residual,
    update_raster,
    variance_class,
)
from liqsurrogate.raster import AbRaster, BandKind, Geometry
from liqsurrogate.surrogate.features import ecef
from tests.oracles.stats import great_circle

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())
M_PER_DEG = 111_194.93  # metres per degree of latitude on the 6371-km sphere
LAT0 = -43.5


def offset(lon, lat, east_m, north_m):
    return lon + east_m / (M_PER_DEG * math.cos(math.radians(lat))), lat + north_m / M_PER_DEG


def brute_simple_kriging(model, slon, slat, res, qlon, qlat):
    """Direct dense solve of the simple-kriging system (no neighbourhood)."""
    s = ecef(slon, slat)
    q = ecef(np.atleast_1d(qlon), np.atleast_1d(qlat))[0]
    total = model.b + model.c0
    K = np.array([[total if i == j else total - model(np.linalg.norm(s[i] - s[j])) for j in range(len(s))] for i in range(len(s))])
    k = np.array([total - model(np.linalg.norm(si - q)) if np.linalg.norm(si - q) > 0 else total for si in s])
    lam = np.linalg.solve(K, k)
    return float(lam @ res), float(total - lam @ k)


# --- model -----------------------------------------------------------------

def test_model_at_range():
    m = SemivariogramModel(0.0, 2.0, 1000.0, 1.0)
    assert m(1000.0) == pytest.approx(FROZEN["stable_h_eq_r"], abs=1e-6)
    assert m(1000.0) == pytest.approx(0.0 + 0.632 * 2.0, abs=1e-3)
    assert m(1000.0) == pytest.approx(2.0 * (1 - math.exp(-1)), abs=1e-12)


def test_model_limits():
    m = SemivariogramModel(0.3, 2.0, 800.0, 1.5)
    assert m(0.0) == 0.3
    assert m(1e9) == pytest.approx(2.3, abs=1e-12)


@given(st.floats(0, 5), st.floats(0.01, 10), st.floats(1, 1e4), st.floats(0.01, 2.0), st.floats(0, 1e4), st.floats(0, 1e4))
def test_model_monotone_in_h(b, c0, r, a, h1, h2):
    m = SemivariogramModel(b, c0, r, a)
    lo, hi = sorted((h1, h2))
    assert m(lo) <= m(hi) + 1e-12


def test_model_validation():
    with pytest.raises(NonPositiveSill):
        SemivariogramModel(0.0, 0.0, 1.0, 1.0)
    for kw in ({"b": -1.0}, {"r": 0.0}, {"alpha": 0.0}, {"alpha": 2.5}):
        with pytest.raises(ValueError):
            SemivariogramModel(**{**dict(b=0.0, c0=1.0, r=1.0, alpha=1.0), **kw})


# --- empirical semivariogram -----------------------------------------------

def test_identical_residuals_zero_gamma(rng):
    lon, lat = 172.0 + rng.uniform(0, 0.02, 50), LAT0 + rng.uniform(0, 0.02, 50)
    bins = empirical_semivariogram(lon, lat, np.full(50, 1.7))
    assert len(bins.gamma) > 0 and np.all(bins.gamma == 0)


def test_two_station_bin():
    lon2, lat2 = offset(172.0, LAT0, 500.0, 0.0)
    bins = empirical_semivariogram([172.0, lon2], [LAT0, lat2], [1.0, 3.0])
    assert bins.gamma.tolist() == [2.0]
    assert bins.count.tolist() == [1]
    assert bins.h[0] == pytest.approx(500.0, rel=1e-5)


def test_pairs_beyond_max_h_dropped():
    lon2, lat2 = offset(172.0, LAT0, 3500.0, 0.0)
    bins = empirical_semivariogram([172.0, lon2], [LAT0, lat2], [1.0, 3.0])
    assert len(bins.gamma) == 0


def test_white_noise_bins_match_variance():
    rng = np.random.default_rng(4)
    n = 10_000
    lon = 172.0 + rng.uniform(0, 0.5, n)
    lat = LAT0 + rng.uniform(0, 0.35, n)
    z = rng.normal(0, 1.5, n)
    bins = empirical_semivariogram(lon, lat, z)
    big = bins.count > 500
    assert big.sum() >= 15
    se = 1.5**2 * np.sqrt(2.0 / bins.count[big])
    assert np.all(np.abs(bins.gamma[big] - 2.25) < 5 * se + 0.05)


def test_semivariogram_matches_brute_pairs(rng):
    lon, lat = 172.0 + rng.uniform(0, 0.03, 18), LAT0 + rng.uniform(0, 0.03, 18)
    z = rng.normal(size=18)
    bins = empirical_semivariogram(lon, lat, z, bin_width=150.0, max_h=3000.0)
    acc = {}
    for i in range(18):
        for j in range(i + 1, 18):
            h = great_circle(lon[i], lat[i], lon[j], lat[j])
            if h <= 3000.0:
                k = max(0, math.ceil(h / 150.0) - 1)
                acc.setdefault(k, []).append(((z[i] - z[j]) ** 2, h))
    keys = sorted(acc)
    assert bins.count.tolist() == [len(acc[k]) for k in keys]
    assert np.allclose(bins.gamma, [sum(s for s, _ in acc[k]) / (2 * len(acc[k])) for k in keys], rtol=1e-12)
    assert np.allclose(bins.h, [np.mean([h for _, h in acc[k]]) for k in keys], rtol=1e-6)


def test_too_few_stations():
    with pytest.raises(TooFewStations):
        empirical_semivariogram([172.0], [LAT0], [1.0])


# --- fitting ---------------------------------------------------------------

def synthetic_bins(model, n=20, width=150.0):
    h = (np.arange(n) + 0.5) * width
    return Bins(h, model(h), np.full(n, 100), n * width)


def test_fit_recovers_parameters():
    m = fit_stable(synthetic_bins(SemivariogramModel(0.0, 2.0, 1000.0, 1.0)))
    assert m.b == 0.0
    assert m.c0 == pytest.approx(2.0, rel=0.05)
    assert m.r == pytest.approx(1000.0, rel=0.05)
    assert m.alpha == pytest.approx(1.0, rel=0.05)


@pytest.mark.parametrize("truth", [(1.0, 600.0, 1.5), (3.0, 1500.0, 0.7), (0.5, 400.0, 2.0)])
def test_fit_recovers_other_shapes(truth):
    m = fit_stable(synthetic_bins(SemivariogramModel(0.0, *truth)))
    assert (m.c0, m.r, m.alpha) == pytest.approx(truth, rel=0.05)


def test_fit_with_free_nugget():
    m = fit_stable(synthetic_bins(SemivariogramModel(0.4, 2.0, 1000.0, 1.0)), fix_nugget_zero=False)
    assert m.b == pytest.approx(0.4, abs=0.05)


def test_fit_errors():
    with pytest.raises(TooFewBins):
        fit_stable(Bins(np.arange(3.0) + 1, np.ones(3), np.ones(3), 3000.0))
    with pytest.raises(NonPositiveSill):
        fit_stable(Bins(np.arange(5.0) + 1, np.zeros(5), np.ones(5), 3000.0))


# --- kriging ---------------------------------------------------------------

MODEL = SemivariogramModel(0.0, 2.0, 1000.0, 1.0)


def cluster(rng, n=12, spread=0.01):
    return 172.0 + rng.uniform(0, spread, n), LAT0 + rng.uniform(0, spread, n)


def test_exact_at_stations(rng):
    lon, lat = cluster(rng)
    res = rng.normal(size=len(lon))
    f = ResidualField(lon, lat, res, MODEL)
    est, var = krige_many(f, lon, lat)
    assert np.max(np.abs(est - res)) < 1e-9
    assert np.all(var < 1e-9 * MODEL.c0)


def test_single_station_example():
    f = ResidualField([172.0], [LAT0], [2.7], MODEL)
    assert krige_residual(f, 172.0, LAT0) == (2.7, 0.0)


def test_far_query_is_pure_model_variance():
    f = ResidualField([172.0], [LAT0], [2.7], MODEL)
    q = offset(172.0, LAT0, 1250.0, 0.0)
    assert krige_residual(f, *q) == (0.0, MODEL.c0)


def test_one_station_closed_form():
    for h in (50.0, 300.0, 900.0, 1199.0):
        f = ResidualField([172.0], [LAT0], [1.5], MODEL)
        q = offset(172.0, LAT0, 0.0, h)
        d = float(np.linalg.norm(ecef(172.0, LAT0) - ecef(*q)))  # chord metric
        w = (MODEL.c0 - MODEL(d)) / MODEL.c0
        est, var = krige_residual(f, *q)
        assert est == pytest.approx(w * 1.5, rel=1e-9)
        assert var == pytest.approx(MODEL.c0 * (1 - w * w), rel=1e-9)


def test_matches_dense_solve(rng):
    lon, lat = cluster(rng, n=10, spread=0.008)
    res = rng.normal(size=10)
    f = ResidualField(lon, lat, res, SemivariogramModel(0.0, 1.3, 700.0, 1.4), prediction_radius=1e7)
    for _ in range(10):
        qlon, qlat = 172.0 + rng.uniform(0, 0.008), LAT0 + rng.uniform(0, 0.008)
        got = krige_residual(f, qlon, qlat)
        want = brute_simple_kriging(f.model, lon, lat, res, qlon, qlat)
        assert got == pytest.approx(want, rel=1e-7, abs=1e-10)


def test_coincident_stations_do_not_fail():
    f = ResidualField([172.0, 172.0, 172.001], [LAT0, LAT0, LAT0], [1.0, 1.0, 0.5], MODEL)
    est, var = krige_residual(f, 172.0005, LAT0)
    assert np.isfinite(est) and 0 <= var <= MODEL.c0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_variance_bounds_and_zero_only_at_stations(seed):
    rng = np.random.default_rng(seed)
    lon, lat = cluster(rng, n=8, spread=0.02)
    f = ResidualField(lon, lat, rng.normal(size=8), MODEL)
    qlon, qlat = 172.0 + rng.uniform(-0.01, 0.03, 200), LAT0 + rng.uniform(-0.01, 0.03, 200)
    _, var = krige_many(f, qlon, qlat)
    assert np.all((var >= 0) & (var <= MODEL.c0))
    dmin = np.min([[great_circle(a, b, c, d) for c, d in zip(lon, lat)] for a, b in zip(qlon, qlat)], axis=1)
    assert np.all(var[dmin > 1.0] > 0)


def test_residual_decays_radially():
    f = ResidualField([172.0], [LAT0], [3.0], MODEL)
    d = np.linspace(0, 1190, 60)
    lon, lat = offset(172.0, LAT0, d, 0.0)
    est, _ = krige_many(f, lon, np.full_like(d, lat))
    assert np.all(np.diff(est) < 0)


# --- classes and raster updating -------------------------------------------

def test_variance_class_boundaries():
    assert variance_class(0.0, 1.0) == 0
    assert variance_class(1.0, 1.0) == 3
    assert variance_class(0.5, 1.0) == 2
    assert variance_class(0.05, 1.0) == 1
    assert variance_class(0.95, 1.0) == 3
    assert variance_class(0.0499, 1.0) == 0
    assert variance_class(5.0, 1.0) == 3
    with pytest.raises(NonPositiveSill):
        variance_class(0.1, 0.0)


def grid_around(lon0, lat0, n=41, cs=0.0005):
    return Geometry(n, n, lon0 - n * cs / 2, lat0 + n * cs / 2, cs)


def test_update_no_stations_is_identity():
    g = grid_around(172.0, LAT0)
    ab = AbRaster.from_float(np.full(g.shape, 10.0), g)
    f = ResidualField([], [], [], MODEL)
    up, cls = update_raster(ab, f)
    assert up.identical(ab)
    assert np.all(cls.values == 3)
    assert cls.band_kind is BandKind.CLASS


def test_update_cancelling_residual_and_radius():
    g = grid_around(172.0, LAT0)
    lon, lat = g.centers()
    ab = AbRaster.from_float(np.full(g.shape, 10.0), g)
    c = (20, 20)
    f = ResidualField([lon[c]], [lat[c]], [-10.0], MODEL)
    up, cls = update_raster(ab, f)
    d = up.decoded()
    assert d[c] == 0.0
    assert cls.values[c] == 0
    dist = np.vectorize(lambda a, b: great_circle(a, b, lon[c], lat[c]))(lon, lat)
    far = dist > 1200.0 * (1 + 1e-9)
    assert far.any()
    assert np.array_equal(up.values[far], ab.values[far])
    assert np.all(cls.values[far] == 3)
    assert np.all(d[~far] <= 10.0)


def test_update_clamps_and_keeps_nodata():
    g = grid_around(172.0, LAT0, n=11)
    lon, lat = g.centers()
    data = np.full(g.shape, 5.0)
    data[5, 4] = np.nan
    ab = AbRaster.from_float(data, g)
    f = ResidualField([lon[5, 5]], [lat[5, 5]], [-50.0], MODEL)
    up, _ = update_raster(ab, f)
    assert up.values[5, 4] == ab.nodata
    assert up.decoded()[5, 5] == 0.0
    assert np.nanmin(up.decoded()) >= 0.0


def test_class_monotone_on_transects():
    g = grid_around(172.0, LAT0, n=61)
    lon, lat = g.centers()
    ab = AbRaster.from_float(np.full(g.shape, 10.0), g)
    c = 30
    f = ResidualField([lon[c, c]], [lat[c, c]], [1.0], MODEL)
    _, cls = update_raster(ab, f)
    for row in (cls.values[c, c:], cls.values[c, c::-1], cls.values[c:, c], cls.values[c::-1, c]):
        assert np.all(np.diff(row.astype(int)) >= 0)


def test_crs_mismatch():
    g = grid_around(172.0, LAT0, n=5)
    ab = AbRaster.from_float(np.ones(g.shape), g)
    f = ResidualField([172.0], [LAT0], [1.0], MODEL, crs="EPSG:2193")
    with pytest.raises(CrsMismatch):
        update_raster(ab, f)


def test_station_csv_round_trip(tmp_path):
    ids = ("a", "b")
    geostat.write_stations(tmp_path / "s.csv", ids, [172.1, 172.2], [LAT0, -43.6], [0.1, -1 / 3])
    got = geostat.read_stations(tmp_path / "s.csv")
    assert got[0] == ids
    assert got[3].tolist() == [0.1, -1 / 3]


def test_field_from_stations_fits_model(rng):
    lon, lat = 172.0 + rng.uniform(0, 0.04, 300), LAT0 + rng.uniform(0, 0.04, 300)
    f = geostat.field_from_stations(range(300), lon, lat, rng.normal(size=300))
    assert f.model.b == 0.0 and f.model.c0 > 0
