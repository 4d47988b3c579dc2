"""Regenerate ``frozen.json`` from the reference scripts.

Run ``python -m tests.oracles.freeze`` from the repository root. The tests
check both that the references still reproduce these numbers and that the
package matches them.
"""

import json
import math
from pathlib import Path

from . import ib08, indices_ref, stats

OUT = Path(__file__).with_name("frozen.json")


def _phi(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def compute():
    out = {}
    out["msf"] = {str(m): ib08.msf(m) for m in (4.5, 6.0, 7.5, 9.0)}
    # Ic at 5 m, water table 2 m
    sv = ib08.total_stress(5.0, 2.0)
    sve = sv - ib08.pore_pressure(5.0, 2.0)
    out["ic_dense_sand_5m"] = ib08.robertson_ic(15.0, 75.0, sv, sve)
    out["ic_clay_5m"] = ib08.robertson_ic(0.8, 32.0, sv, sve)
    out["fc_bi16"] = {"1.5": ib08.fines_bi16(1.5), "2.6": ib08.fines_bi16(2.6)}
    out["fc_nz"] = {"1.5": ib08.fines_nz(1.5), "2.6": ib08.fines_nz(2.6)}
    out["fs_loose_sand_5m_pga0.4_m7.5"] = ib08.fs_at(5.0, 4.0, 20.0, 1.0, 0.4, 7.5)[0]
    out["eq1"] = {
        "A10_B1_x0.6": 10.0 * math.atan(1.0 * (0.6 - 0.1) ** 2),
        "A50_B5_x0.5": 50.0 * math.atan(5.0 * (0.5 - 0.1) ** 2),
    }
    out["pgf_median5_beta0.5_mi10"] = _phi(math.log(2.0) / 0.5)
    out["stable_h_eq_r"] = 0.0 + 2.0 * (1.0 - math.exp(-1.0))
    out["lpi_full_column"] = indices_ref.lpi_uniform(0.0, 0.0, 20.0)
    out["lpi_half_column"] = indices_ref.lpi_uniform(0.5, 10.0, 20.0)
    out["lpi_ish_full_column"] = indices_ref.lpi_ish_uniform(0.0, 0.4, 20.0)
    out["lsn_loose_column"] = indices_ref.lsn_uniform(indices_ref.zrb_strain_fs06(80.0), 2.0, 10.0)
    out["brier"] = {
        "perfect": float(stats.brier_exact([1.0, 0.0], [1.0, 0.0])),
        "half": float(stats.brier_exact([0.5, 0.5], [1.0, 0.0])),
        "pair": float(stats.brier_exact([0.8, 0.2], [1.0, 0.0])),
    }
    out["ks_1234_3456"] = stats.ks([1, 2, 3, 4], [3, 4, 5, 6])
    out["cohens_d_123_234"] = stats.cohens_d([1, 2, 3], [2, 3, 4])
    return out


def main():
    OUT.write_text(json.dumps(compute(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
