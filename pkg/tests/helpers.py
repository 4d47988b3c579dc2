"""Synthetic profile builders shared by the tests."""

import numpy as np

from liqsurrogate.cpt import CptProfile
from liqsurrogate.mechanics import FsProfile

# representative soil types: (qc MPa, fs kPa)
DENSE_SAND = (15.0, 75.0)
LOOSE_SAND = (4.0, 20.0)
CLAY = (0.8, 32.0)


def layered(layers, zmax=20.0, dz=0.05, gwt=1.0, pid="p", lon=172.6, lat=-43.5):
    """Standardized profile from ``[(top, bottom, qc, fs), ...]``; gaps take the last layer."""
    n = int(round(zmax / dz))
    z = np.arange(1, n + 1) * dz
    qc = np.full(n, layers[-1][2])
    fs = np.full(n, layers[-1][3])
    for top, bottom, q, f in layers:
        sel = (z > top - 1e-9) & (z <= bottom + 1e-9)
        qc[sel] = q
        fs[sel] = f
    return CptProfile(pid, lon, lat, z, qc, fs, gwt_depth=gwt, interval=dz, aligned=True)


def uniform(soil, zmax=20.0, dz=0.05, gwt=1.0, pid="p", **kw):
    return layered([(0.0, zmax, *soil)], zmax, dz, gwt, pid, **kw)


def random_profile(rng, pid="r", zmax=15.0, dz=0.05, gwt=None):
    """Smoothly varying sand/silt profile with a random water table."""
    n = int(round(zmax / dz))
    z = np.arange(1, n + 1) * dz
    k = rng.integers(2, 5)
    knots = np.sort(rng.uniform(0, zmax, k))
    qk = rng.uniform(2.0, 14.0, k)
    rfk = rng.uniform(0.4, 2.0, k)
    qc = np.interp(z, knots, qk)
    fs = qc * 1000.0 * np.interp(z, knots, rfk) / 100.0
    g = rng.uniform(0.5, 3.0) if gwt is None else gwt
    return CptProfile(pid, 172.6, -43.5, z, qc, fs, gwt_depth=float(g), interval=dz, aligned=True)


def fs_column(fs_values, zmax=20.0, dz=0.05, active=True, qc1ncs=100.0):
    """FsProfile with an arbitrary FS array (callable of depth or array)."""
    n = int(round(zmax / dz))
    z = np.arange(1, n + 1) * dz
    fs = fs_values(z) if callable(fs_values) else np.broadcast_to(np.asarray(fs_values, float), z.shape).copy()
    act = np.broadcast_to(np.asarray(active), z.shape).copy()
    q = np.broadcast_to(np.asarray(qc1ncs, float), z.shape).copy()
    return FsProfile(z, fs, np.full(n, 1.8), act, act, 18.0 * z, 10.0 * z, q, dz)



def shakemap_xml(lon_min, lat_max, nlon, nlat, spacing, pga_g, magnitude=7.0, event_id="synthetic", units="g"):
    """ShakeMap grid.xml text for a regular grid; ``pga_g`` is (nlat, nlon), row 0 north."""
    pga_g = np.asarray(pga_g, float)
    lon_min, lat_max, spacing, magnitude = float(lon_min), float(lat_max), float(spacing), float(magnitude)
    scale = 100.0 if units == "pctg" else 1.0
    lon_max = lon_min + (nlon - 1) * spacing
    lat_min = lat_max - (nlat - 1) * spacing
    rows = []
    for i in range(nlat):
        for j in range(nlon):
            rows.append(f"{lon_min + j * spacing!r} {lat_max - i * spacing!r} {float(pga_g[i, j]) * scale!r}")
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<shakemap_grid xmlns="http://earthquake.usgs.gov/eqcenter/shakemap" event_id="{event_id}">\n'
        f'<event event_id="{event_id}" magnitude="{magnitude!r}" />\n'
        f'<grid_specification lon_min="{lon_min!r}" lat_min="{lat_min!r}" lon_max="{lon_max!r}" lat_max="{lat_max!r}" '
        f'nominal_lon_spacing="{spacing!r}" nominal_lat_spacing="{spacing!r}" nlon="{nlon}" nlat="{nlat}" />\n'
        '<grid_field index="1" name="LON" units="dd" />\n'
        '<grid_field index="2" name="LAT" units="dd" />\n'
        f'<grid_field index="3" name="PGA" units="{units}" />\n'
        "<grid_data>\n" + "\n".join(rows) + "\n</grid_data>\n</shakemap_grid>\n"
    )
