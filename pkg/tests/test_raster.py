import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liqsurrogate import raster
from liqsurrogate.curves import NODATA
from liqsurrogate.errors import BadMagic, GridMismatch, HeaderInconsistent, MalformedHeader, RaggedRows, TruncatedFile
from liqsurrogate.raster import (
    AbRaster,
    BandKind,
    Geometry,
    Mask,
    MaskSet,
    apply_masks,
    export_ascii_grid,
    import_ascii_grid,
    read_abgrid,
    write_abgrid,
)


def random_raster(rng, max_side=30):
    w, h = (int(v) for v in rng.integers(1, max_side, 2))
    codes = rng.integers(0, 65535, (h, w)).astype(np.uint16)
    codes[rng.random((h, w)) < 0.2] = NODATA
    kind = BandKind(int(rng.integers(0, len(BandKind))))
    return AbRaster(w, h, float(rng.uniform(-180, 170)), float(rng.uniform(-80, 80)), float(rng.uniform(1e-4, 0.1)),
                    codes, kind, int(rng.integers(0, 256)), float(rng.choice([0.01, 1e-3, 1e-4, 1.0])))


def test_header_layout_bytes():
    r = AbRaster(3, 2, 172.5, -43.25, 0.000833, np.arange(6, dtype=np.uint16), BandKind.B, 1, 0.01)
    b = raster.to_bytes(r)
    assert len(b) == 4 + 4 + 4 + 8 * 3 + 1 + 1 + 4 + 2 + 12
    assert b[:4] == b"ABG1"
    assert struct.unpack_from("<II", b, 4) == (3, 2)
    assert struct.unpack_from("<ddd", b, 12) == (172.5, -43.25, 0.000833)
    assert struct.unpack_from("<BBfH", b, 36) == (1, 1, np.float32(0.01), 65535)
    assert np.frombuffer(b, "<u2", offset=44).tolist() == list(range(6))


def test_small_round_trip(tmp_path):
    r = AbRaster(3, 2, 172.5, -43.25, 0.000833, np.array([[1, 2, 3], [4, NODATA, 6]], np.uint16))
    back = read_abgrid(write_abgrid(r, tmp_path / "r.abg"))
    assert back.identical(r) and back == r
    assert write_abgrid(back, tmp_path / "s.abg").read_bytes() == (tmp_path / "r.abg").read_bytes()


def test_single_cell_codec():
    r = AbRaster(1, 1, 0.0, 0.0, 1.0, np.array([1234], np.uint16), quant_scale=0.01)
    assert r.decoded()[0, 0] == pytest.approx(12.34, abs=1e-12)


def test_random_round_trips(tmp_path):
    rng = np.random.default_rng(7)
    for k in range(50):
        r = random_raster(rng)
        p = write_abgrid(r, tmp_path / f"{k}.abg")
        back = read_abgrid(p)
        assert back.identical(r)
        assert raster.to_bytes(back) == p.read_bytes()


def test_truncated_and_bad_magic(tmp_path):
    r = AbRaster(4, 4, 0.0, 0.0, 0.1, np.zeros(16, np.uint16))
    b = raster.to_bytes(r)
    with pytest.raises(TruncatedFile):
        raster.from_bytes(b[:-3])
    with pytest.raises(TruncatedFile):
        raster.from_bytes(b[:20])
    with pytest.raises(BadMagic):
        raster.from_bytes(b"ABG2" + b[4:])
    with pytest.raises(HeaderInconsistent):
        raster.from_bytes(b + b"\x00\x00")
    bad_kind = bytearray(b)
    bad_kind[36] = 99
    with pytest.raises(HeaderInconsistent):
        raster.from_bytes(bytes(bad_kind))
    with pytest.raises(HeaderInconsistent):
        AbRaster(2, 2, 0, 0, 1, np.zeros(5, np.uint16))


def test_values_immutable():
    r = AbRaster(2, 1, 0, 0, 1, np.zeros(2, np.uint16))
    with pytest.raises(ValueError):
        r.values[0, 0] = 1


@settings(max_examples=50)
@given(st.integers(1, 50), st.integers(1, 50), st.data())
def test_geotransform_invertible(w, h, data):
    g = Geometry(w, h, data.draw(st.floats(-179, 170)), data.draw(st.floats(-80, 80)), data.draw(st.floats(1e-4, 0.5)))
    i = data.draw(st.integers(0, h - 1))
    j = data.draw(st.integers(0, w - 1))
    assert tuple(int(v) for v in g.cell_of(*g.coord_of(i, j))) == (i, j)


# --- ASCII grid --------------------------------------------------------------

def test_ascii_nodata_and_corner(tmp_path):
    p = tmp_path / "g.asc"
    p.write_text("ncols 2\nnrows 3\nxllcorner 170.0\nyllcorner -44.0\ncellsize 0.5\nNODATA_value -9999\n"
                 "1 2\n3 -9999\n5 6\n")
    r = import_ascii_grid(p)
    assert (r.width, r.height) == (2, 3)
    # upper-left origin = lower-left + nrows * cellsize
    assert (r.origin_lon, r.origin_lat) == (170.0, -42.5)
    assert r.values[1, 1] == NODATA
    assert r.decoded()[0].tolist() == [1.0, 2.0]
    assert r.decoded()[2].tolist() == [5.0, 6.0]


def test_ascii_center_header(tmp_path):
    p = tmp_path / "g.asc"
    p.write_text("ncols 1\nnrows 1\nxllcenter 170.25\nyllcenter -44.75\ncellsize 0.5\n7\n")
    r = import_ascii_grid(p)
    assert (r.origin_lon, r.origin_lat) == (170.0, -44.5)


def test_ascii_round_trip_within_quantization(tmp_path):
    rng = np.random.default_rng(3)
    for k in range(10):
        g = Geometry(int(rng.integers(1, 20)), int(rng.integers(1, 20)), 172.0, -43.0, 0.000833)
        data = rng.uniform(0, 600, g.shape)
        data[rng.random(g.shape) < 0.1] = np.nan
        r = AbRaster.from_float(data, g)
        back = import_ascii_grid(export_ascii_grid(r, tmp_path / f"{k}.asc"))
        assert np.array_equal(back.mask, r.mask)
        assert np.all(np.abs(back.values.astype(int) - r.values.astype(int))[r.mask] <= 1)
        assert back.geometry.aligned(r.geometry)


def test_ascii_errors(tmp_path):
    p = tmp_path / "g.asc"
    p.write_text("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3\n")
    with pytest.raises(RaggedRows):
        import_ascii_grid(p)
    p.write_text("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n")
    with pytest.raises(RaggedRows):
        import_ascii_grid(p)
    p.write_text("ncols 2\nnrows 2\nxllcorner 0\ncellsize 1\n1 2\n3 4\n")
    with pytest.raises(MalformedHeader):
        import_ascii_grid(p)
    p.write_text("ncols two\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n")
    with pytest.raises(MalformedHeader):
        import_ascii_grid(p)


# --- masks -------------------------------------------------------------------

def base(shape=(6, 8)):
    g = Geometry(shape[1], shape[0], 172.0, -43.0, 0.01)
    return AbRaster.from_float(np.arange(np.prod(shape), dtype=float).reshape(shape), g)


def test_empty_mask_is_identity():
    r = base()
    assert apply_masks(r, MaskSet()).identical(r)
    assert apply_masks(r, None).identical(r)


def test_full_mask_all_nodata():
    r = base()
    out = apply_masks(r, MaskSet().add("lakes", np.ones(r.geometry.shape, bool)))
    assert np.all(out.values == NODATA)


def test_checkerboard_half():
    r = base()
    ii, jj = np.indices(r.geometry.shape)
    out = apply_masks(r, MaskSet().add("glaciers", (ii + jj) % 2 == 0))
    assert (~out.mask).sum() == r.values.size // 2
    keep = (ii + jj) % 2 == 1
    assert np.array_equal(out.values[keep], r.values[keep])


def test_masks_union_and_nodata_preserved():
    r = base()
    codes = r.values.copy()
    codes[0, 0] = NODATA
    r = r.with_values(codes)
    a = np.zeros(r.geometry.shape, bool)
    b = np.zeros(r.geometry.shape, bool)
    a[1, 1], b[2, 2] = True, True
    out = apply_masks(r, MaskSet().add("lakes", a).add("permafrost", b))
    assert out.values[0, 0] == NODATA and out.values[1, 1] == NODATA and out.values[2, 2] == NODATA
    assert (~out.mask).sum() == 3


def test_mask_shape_mismatch():
    r = base()
    with pytest.raises(GridMismatch):
        apply_masks(r, MaskSet().add("x", np.zeros((2, 2), bool)))


def test_mask_resampled_nearest():
    r = base((6, 8))
    coarse = Geometry(4, 3, 172.0, -43.0, 0.02)
    m = np.zeros(coarse.shape, bool)
    m[0, 0] = True  # covers fine cells rows 0-1, cols 0-1
    out = apply_masks(r, MaskSet().add("ice", Mask(coarse, m)))
    want = np.zeros(r.geometry.shape, bool)
    want[:2, :2] = True
    assert np.array_equal(~out.mask, want)


def test_slope_mask_threshold():
    g = Geometry(3, 1, 172.0, -43.0, 0.01)
    slope = AbRaster.from_float(np.array([[4.99, 5.0, np.nan]]), g, BandKind.MI)
    m = raster.slope_mask(slope, 5.0)
    assert m.data.tolist() == [[False, True, True]]


def test_describe():
    info = raster.describe(base())
    assert info["width"] == 8 and info["nodata_cells"] == 0
    assert info["max"] == pytest.approx(47.0)
