"""The reference scripts themselves: frozen values and analytic sanity."""

import json
import math
from pathlib import Path

import pytest

from tests.oracles import freeze, ib08, indices_ref, stats

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


def test_references_reproduce_frozen_values():
    assert freeze.compute() == FROZEN


def test_msf_reference_values():
    assert ib08.msf(7.5) == pytest.approx(1.000, abs=1e-3)
    assert ib08.msf(4.5) == 1.8
    assert ib08.msf(9.0) == pytest.approx(0.669, abs=1e-3)


def test_lpi_reference_analytic():
    # integral of (1 - FS)(10 - z/2) over the saturated part of a 20-m column
    assert indices_ref.lpi_uniform(0.0, 0.0, 20.0) == pytest.approx(100.0, abs=1e-12)
    assert indices_ref.lpi_uniform(0.5, 10.0, 20.0) == pytest.approx(0.5 * 25.0, abs=1e-12)


def test_lpi_ish_reference_analytic():
    # integral of 25.56 / z from 0.4 m to 20 m
    assert indices_ref.lpi_ish_uniform(0.0, 0.4, 20.0) == pytest.approx(25.56 * math.log(50.0), rel=1e-12)
    assert indices_ref.lpi_ish_uniform(0.0, 0.4, 20.0) == pytest.approx(99.99, abs=0.01)


def test_lsn_reference_scales_with_strain():
    assert indices_ref.lsn_uniform(2.0, 2.0, 10.0) == pytest.approx(2 * indices_ref.lsn_uniform(1.0, 2.0, 10.0))
    assert indices_ref.zrb_strain_fs06(147.0) == pytest.approx(102.0 * 147.0 ** -0.82)


def test_stats_reference_small_fixtures():
    assert stats.brier([0.8, 0.2], [1, 0]) == pytest.approx(0.04, abs=1e-15)
    assert stats.ks([1, 2, 3, 4], [3, 4, 5, 6]) == 0.5
    assert stats.cohens_d([1, 2, 3], [2, 3, 4]) == -1.0
    assert stats.percentile_quantile([0.0, 1.0, 2.0, 3.0], 0.5) == 1.5
    assert stats.great_circle(0, 0, 0, 1) == pytest.approx(math.pi * 6371008.8 / 180, rel=1e-12)
    assert stats.chord(0, 0, 0, 1) < stats.great_circle(0, 0, 0, 1)
