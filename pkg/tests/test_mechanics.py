import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liqsurrogate import indices, mechanics
from liqsurrogate.mechanics import (
    FS_CAP,
    LoadingScenario,
    factor_of_safety,
    fines_content,
    msf,
    resistance,
    soil_behavior_index,
    stresses,
    susceptibility,
)
from tests.helpers import CLAY, DENSE_SAND, LOOSE_SAND, layered, random_profile, uniform
from tests.oracles import ib08

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


def at_depth(p, z):
    return int(np.argmin(np.abs(p.depth - z)))


def test_ic_examples_match_reference():
    sand = uniform(DENSE_SAND, zmax=6.0, gwt=2.0)
    clay = uniform(CLAY, zmax=6.0, gwt=2.0)
    ic_sand = soil_behavior_index(sand)[at_depth(sand, 5.0)]
    ic_clay = soil_behavior_index(clay)[at_depth(clay, 5.0)]
    assert ic_sand < 2.05
    assert ic_clay > 2.6
    assert ic_sand == pytest.approx(FROZEN["ic_dense_sand_5m"], rel=1e-4)
    assert ic_clay == pytest.approx(FROZEN["ic_clay_5m"], rel=1e-4)


def test_ic_decreases_when_normalized_tip_doubles():
    sv, sve = np.array([90.0]), np.array([60.0])
    qt, fs = np.array([3000.0]), np.array([30.0])
    n = np.array([0.8])
    base = mechanics._ic_from(qt, fs, sv, sve, n)
    # doubling qnet and fs leaves Fr unchanged and doubles Qtn
    doubled = mechanics._ic_from(2 * (qt - sv) + sv, 2 * fs, sv, sve, n)
    assert doubled[0] < base[0]


def test_susceptibility_boundary_inclusive():
    assert susceptibility(np.array([2.5, 2.51])).tolist() == [True, False]


def test_fines_content_examples():
    assert fines_content(1.5) == FROZEN["fc_bi16"]["1.5"] == 0.0
    assert fines_content(2.6) > 35
    assert fines_content(2.6) == pytest.approx(FROZEN["fc_bi16"]["2.6"])
    assert fines_content(2.6, "nz") == pytest.approx(FROZEN["fc_nz"]["2.6"])


@given(st.floats(1.3, 3.0), st.floats(1.3, 3.0), st.sampled_from(["global", "nz"]))
def test_fines_content_monotone_and_bounded(a, b, region):
    lo, hi = sorted((a, b))
    f_lo, f_hi = fines_content(lo, region), fines_content(hi, region)
    assert 0.0 <= f_lo <= f_hi <= 100.0


def test_msf_frozen_values():
    for m, ref in FROZEN["msf"].items():
        assert msf(float(m)) == pytest.approx(ref, abs=1e-12)


def test_loose_sand_triggers_and_matches_reference():
    p = uniform(LOOSE_SAND, zmax=10.0, gwt=1.0)
    f = factor_of_safety(p, LoadingScenario(0.4, 7.5))
    i = at_depth(p, 5.0)
    assert f.fs_liq[i] < 1.0
    assert f.fs_liq[i] == pytest.approx(FROZEN["fs_loose_sand_5m_pga0.4_m7.5"], rel=1e-3)
    # whole loose layer below the water table triggers
    assert np.all(f.fs_liq[p.depth > 1.0] < 1.0)


def test_doubling_pga_strictly_lowers_fs():
    p = random_profile(np.random.default_rng(1), zmax=12)
    res = resistance(p)
    f1 = mechanics.fs_matrix(res, 0.05, 7.0)[0]
    f2 = mechanics.fs_matrix(res, 0.10, 7.0)[0]
    live = res.susceptible & res.saturated & (f2 < FS_CAP)
    assert live.any()
    assert np.all(f2[live] < f1[live])


def test_larger_magnitude_lowers_fs():
    p = uniform(LOOSE_SAND, zmax=10.0, gwt=1.0)
    lo = factor_of_safety(p, LoadingScenario(0.2, 9.0)).fs_liq
    hi = factor_of_safety(p, LoadingScenario(0.2, 6.0)).fs_liq
    live = p.depth > 1.0
    assert np.all(lo[live] < hi[live])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5000), st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.floats(4.5, 9.0), st.floats(4.5, 9.0))
def test_fs_monotone_in_loading(seed, a1, a2, m1, m2):
    p = random_profile(np.random.default_rng(seed), zmax=10)
    res = resistance(p)
    lo_a, hi_a = sorted((a1, a2))
    lo_m, hi_m = sorted((m1, m2))
    fs = mechanics.fs_matrix(res, [lo_a, hi_a, hi_a], [lo_m, lo_m, hi_m])
    assert np.all(fs[1] <= fs[0])
    assert np.all(fs[2] <= fs[1])


def test_stresses_invariants():
    p = random_profile(np.random.default_rng(5), gwt=2.3)
    sv, u, sve = stresses(p)
    assert np.all(np.diff(sv) >= 0) and np.all(np.diff(sve) >= 0)
    below = p.depth > p.gwt_depth
    assert np.allclose((sv - sve)[below], mechanics.GAMMA_W * (p.depth[below] - p.gwt_depth))
    assert np.all((sv - sve)[~below] == 0)
    assert np.all(sv >= sve) and np.all(sve > 0)


def test_fs_profile_invariants():
    p = layered([(0, 4, *LOOSE_SAND), (4, 8, *CLAY), (8, 15, *DENSE_SAND)], zmax=15, gwt=1.5)
    f = factor_of_safety(p, LoadingScenario(0.5, 7.0))
    assert np.all(f.fs_liq > 0) and np.all(f.fs_liq <= FS_CAP)
    assert np.all(f.fs_liq[~f.susceptible] == FS_CAP)
    assert np.all(f.ic >= 0)
    assert np.all(f.sigma_v >= f.sigma_v_eff)


def test_raising_water_table_caps_newly_dry_depths():
    p = random_profile(np.random.default_rng(8), gwt=1.0)
    load = LoadingScenario(0.4, 7.5)
    wet = factor_of_safety(p, load).fs_liq
    dry = factor_of_safety(p.with_gwt(6.0), load).fs_liq
    newly_dry = (p.depth > 1.0) & (p.depth <= 6.0)
    assert np.all(dry[newly_dry] == FS_CAP)
    assert np.all(dry[newly_dry] >= wet[newly_dry])
    assert np.all(dry[p.depth <= 1.0] == wet[p.depth <= 1.0])


def test_zero_ic_threshold_silences_every_index():
    p = uniform(LOOSE_SAND, zmax=10.0, gwt=1.0)
    f = factor_of_safety(p, LoadingScenario(0.8, 7.5), ic_threshold=0.0)
    assert not f.susceptible.any()
    assert all(indices.compute(k, f).value == 0.0 for k in indices.MIKind)


def test_loading_scenario_validation():
    with pytest.raises(ValueError):
        LoadingScenario(0.0, 7.0)
    with pytest.raises(ValueError):
        LoadingScenario(0.3, 9.8)


def test_reference_agrees_on_layered_profile():
    p = layered([(0, 3, *DENSE_SAND), (3, 9, *LOOSE_SAND), (9, 15, *CLAY)], zmax=15, gwt=2.0)
    f = factor_of_safety(p, LoadingScenario(0.35, 6.5))
    ref = ib08.fs_profile(p.depth, p.qc, p.fs, p.gwt_depth, 0.35, 6.5)
    live = f.susceptible & f.saturated
    got = f.fs_liq[live]
    want = np.array([r[0] for r in ref])[live]
    assert np.allclose(got, want, rtol=1e-3)
