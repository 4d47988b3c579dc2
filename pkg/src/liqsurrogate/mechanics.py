"""Liquefaction triggering per depth: Idriss & Boulanger (2008) CPT procedure.

Soil behaviour type index follows Robertson (2009) with iterative stress
normalization; fines content comes from the Boulanger & Idriss (2016)
correlation (global) or a Christchurch-calibrated fit (New Zealand). The
loading-independent part of the chain is computed once per profile by
:func:`resistance`, so sweeping a profile over many loadings only
re-evaluates the cyclic stress ratio.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cpt import CptProfile
from .errors import NonConvergence, NonPositiveStress

log = logging.getLogger(__name__)

PA = 101.325  # kPa
GAMMA_W = 9.81  # kN/m3
FS_CAP = 4.0
IC_THRESHOLD = 2.5
TOL = 1e-3
MAX_ITER = 50
MSF_MAX = 1.8
MSF_FLOOR = 0.05

# two-zone default unit weights, kN/m3
GAMMA_DRY = 17.0
GAMMA_SAT = 19.5


@dataclass(frozen=True)
class LoadingScenario:
    pga: float  # g
    magnitude: float  # Mw

    def __post_init__(self):
        if not self.pga > 0:
            raise ValueError(f"pga must be > 0, got {self.pga}")
        if not 4.0 <= self.magnitude <= 9.5:
            raise ValueError(f"magnitude outside [4.0, 9.5]: {self.magnitude}")


@dataclass(frozen=True, eq=False)
class FsProfile:
    depth: np.ndarray
    fs_liq: np.ndarray
    ic: np.ndarray
    susceptible: np.ndarray
    saturated: np.ndarray
    sigma_v: np.ndarray
    sigma_v_eff: np.ndarray
    qc1ncs: np.ndarray
    interval: float

    def to_rows(self):
        cols = ("depth", "fs_liq", "ic", "susceptible", "saturated", "sigma_v", "sigma_v_eff", "qc1ncs")
        arrays = [getattr(self, c) for c in cols]
        return cols, list(zip(*arrays))


@dataclass(frozen=True, eq=False)
class Resistance:
    """Loading-independent quantities of the triggering chain, per depth."""

    depth: np.ndarray
    interval: float
    sigma_v: np.ndarray
    sigma_v_eff: np.ndarray
    ic: np.ndarray
    fc: np.ndarray
    qc1n: np.ndarray
    qc1ncs: np.ndarray
    crr75: np.ndarray  # M7.5, 1 atm
    k_sigma: np.ndarray
    susceptible: np.ndarray
    saturated: np.ndarray


def _interval(profile: CptProfile) -> float:
    if profile.interval is None:
        raise ValueError(f"profile {profile.id!r} is not standardized")
    return profile.interval


def stresses(profile: CptProfile):
    """Total stress, pore pressure and effective stress (kPa) at each sample depth."""
    z = profile.depth
    g = profile.gwt_depth
    u = GAMMA_W * np.maximum(z - g, 0.0)
    if profile.unit_weight_model == "two_zone":
        sigma_v = GAMMA_DRY * np.minimum(z, g) + GAMMA_SAT * np.maximum(z - g, 0.0)
    elif profile.unit_weight_model == "robertson_cabal":
        # Robertson & Cabal (2010)
        qt = profile.qc * 1000.0
        rf = np.maximum(profile.fs / qt * 100.0, 0.1)
        gamma = GAMMA_W * (0.27 * np.log10(rf) + 0.36 * np.log10(qt / PA) + 1.236)
        gamma = np.clip(gamma, 14.0, 22.5)
        sigma_v = np.cumsum(gamma * _interval(profile))
    else:
        raise ValueError(f"unknown unit weight model {profile.unit_weight_model!r}")
    sigma_v_eff = sigma_v - u
    if np.any(sigma_v_eff <= 0):
        raise NonPositiveStress(f"profile {profile.id!r}: non-positive effective stress")
    return sigma_v, u, sigma_v_eff


def _ic_from(qt, fs, sigma_v, sigma_v_eff, n):
    qnet = np.maximum(qt - sigma_v, 0.1)
    fr = np.maximum(fs / qnet * 100.0, 0.1)
    qtn = np.maximum(qnet / PA * (PA / sigma_v_eff) ** n, 1.0)
    return np.sqrt((3.47 - np.log10(qtn)) ** 2 + (np.log10(fr) + 1.22) ** 2)


def soil_behavior_index(profile: CptProfile, stress=None) -> np.ndarray:
    """Robertson (2009) Ic with the stress exponent iterated to convergence."""
    sigma_v, _, sigma_v_eff = stress if stress is not None else stresses(profile)
    qt = profile.qc * 1000.0
    n = np.ones_like(qt)
    for _ in range(MAX_ITER):
        ic = _ic_from(qt, profile.fs, sigma_v, sigma_v_eff, n)
        n_new = np.minimum(0.381 * ic + 0.05 * sigma_v_eff / PA - 0.15, 1.0)
        done = np.max(np.abs(n_new - n), initial=0.0) < TOL
        n = n_new
        if done:
            return _ic_from(qt, profile.fs, sigma_v, sigma_v_eff, n)
    raise NonConvergence(f"profile {profile.id!r}: Ic did not converge in {MAX_ITER} iterations")


def susceptibility(ic, threshold: float = IC_THRESHOLD) -> np.ndarray:
    return np.asarray(ic) <= threshold


def fines_content(ic, region: str = "global", c_fc: float = 0.0) -> np.ndarray:
    ic = np.asarray(ic, dtype=float)
    if region == "global":
        # Boulanger & Idriss (2016), fitting parameter C_FC at its default 0
        fc = 80.0 * (ic + c_fc) - 137.0
    elif region == "nz":
        # Christchurch-calibrated linear fit
        fc = 80.645 * ic - 128.5967
    else:
        raise ValueError(f"unknown fines-content region {region!r}")
    return np.clip(fc, 0.0, 100.0)


def msf(magnitude):
    """Idriss & Boulanger (2008) magnitude scaling factor, capped at 1.8."""
    m = np.asarray(magnitude, dtype=float)
    out = np.minimum(6.9 * np.exp(-m / 4.0) - 0.058, MSF_MAX)
    if np.any(out < MSF_FLOOR):
        log.warning("MSF below %.2f for magnitude %s; floored", MSF_FLOOR, magnitude)
        out = np.maximum(out, MSF_FLOOR)
    return out if out.ndim else float(out)


def stress_reduction(z, magnitude):
    """Shear stress reduction coefficient rd(z, M)."""
    z = np.asarray(z, dtype=float)
    m = np.asarray(magnitude, dtype=float)
    alpha = -1.012 - 1.126 * np.sin(z / 11.73 + 5.133)
    beta = 0.106 + 0.118 * np.sin(z / 11.28 + 5.142)
    shallow = np.exp(alpha + beta * m)
    deep = 0.12 * np.exp(0.22 * m)
    return np.where(z <= 34.0, shallow, deep)


def _qc1n(qt, sigma_v_eff):
    q = qt / PA
    qc1n = q.copy()
    for _ in range(MAX_ITER):
        m = 1.338 - 0.249 * np.clip(qc1n, 21.0, 254.0) ** 0.264
        cn = np.minimum((PA / sigma_v_eff) ** m, 1.7)
        new = cn * q
        done = np.max(np.abs(new - qc1n), initial=0.0) < TOL
        qc1n = new
        if done:
            return qc1n
    raise NonConvergence(f"qc1N did not converge in {MAX_ITER} iterations")


def resistance(profile: CptProfile, region: str = "global", ic_threshold: float = IC_THRESHOLD) -> Resistance:
    dz = _interval(profile)
    stress = stresses(profile)
    sigma_v, _, sigma_v_eff = stress
    ic = soil_behavior_index(profile, stress)
    fc = fines_content(ic, region)
    qt = profile.qc * 1000.0
    qc1n = _qc1n(qt, sigma_v_eff)

    fcp = fc + 0.01
    dq = (5.4 + qc1n / 16.0) * np.exp(1.63 - 9.7 / fcp - (15.7 / fcp) ** 2)
    qc1ncs = qc1n + dq
    q = np.minimum(qc1ncs, 211.0)
    crr75 = np.exp(q / 540.0 + (q / 67.0) ** 2 - (q / 80.0) ** 3 + (q / 114.0) ** 4 - 3.0)
    c_sigma = np.minimum(1.0 / (37.3 - 8.27 * np.minimum(qc1n, 211.0) ** 0.264), 0.3)
    k_sigma = np.minimum(1.0 - c_sigma * np.log(sigma_v_eff / PA), 1.1)

    return Resistance(
        depth=profile.depth,
        interval=dz,
        sigma_v=sigma_v,
        sigma_v_eff=sigma_v_eff,
        ic=ic,
        fc=fc,
        qc1n=qc1n,
        qc1ncs=qc1ncs,
        crr75=crr75,
        k_sigma=k_sigma,
        susceptible=susceptibility(ic, ic_threshold),
        saturated=profile.depth > profile.gwt_depth,
    )


def fs_matrix(res: Resistance, pga, magnitude) -> np.ndarray:
    """Factor of safety for several loadings at once.

    ``pga`` and ``magnitude`` are broadcast together; the result has shape
    ``(n_loadings, n_depths)``. Non-susceptible or unsaturated samples get
    the cap.
    """
    pga = np.atleast_1d(np.asarray(pga, dtype=float))[:, None]
    mag = np.atleast_1d(np.asarray(magnitude, dtype=float))[:, None]
    pga, mag = np.broadcast_arrays(pga, mag)
    rd = stress_reduction(res.depth[None, :], mag)
    csr = 0.65 * pga * (res.sigma_v / res.sigma_v_eff)[None, :] * rd
    crr = (res.crr75 * res.k_sigma)[None, :] * msf(mag)
    fs = np.minimum(crr / csr, FS_CAP)
    active = (res.susceptible & res.saturated)[None, :]
    return np.where(active, fs, FS_CAP)


def factor_of_safety(
    profile: CptProfile,
    loading: LoadingScenario,
    region: str = "global",
    ic_threshold: float = IC_THRESHOLD,
    res: Resistance | None = None,
) -> FsProfile:
    if res is None:
        res = resistance(profile, region, ic_threshold)
    fs = fs_matrix(res, loading.pga, loading.magnitude)[0]
    return fs_profile_from(res, fs)


def fs_profile_from(res: Resistance, fs: np.ndarray) -> FsProfile:
    return FsProfile(
        depth=res.depth,
        fs_liq=fs,
        ic=res.ic,
        susceptible=res.susceptible,
        saturated=res.saturated,
        sigma_v=res.sigma_v,
        sigma_v_eff=res.sigma_v_eff,
        qc1ncs=res.qc1ncs,
        interval=res.interval,
    )
