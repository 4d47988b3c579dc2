"""Manifestation indices LPI, LPI_ISH and LSN from factor-of-safety profiles.

Each sample of a standardized profile stands for the layer
``(z - dz, z]``; the depth integrals use the midpoint rule on those layers
(clipped to the integration limits). Only saturated, susceptible samples
contribute. The ``*_values`` functions take an FS matrix of shape
``(n_loadings, n_depths)`` so a whole loading sweep is one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptyProfile
from .mechanics import FsProfile

MAX_DEPTH = 20.0
ISH_WEIGHT = 25.56
ISH_MIN_DEPTH = 0.4
ISH_CRUST_LIMIT = 3.0
STRAIN_MAX_PCT = 5.5


class MIKind(str, Enum):
    LPI = "lpi"
    LPI_ISH = "lpish"
    LSN = "lsn"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]

    @classmethod
    def parse(cls, value) -> "MIKind":
        if isinstance(value, MIKind):
            return value
        text = str(value).strip().lower()
        for k in cls:
            if text in (k.value, k.name.lower()):
                return k
        raise ValueError(f"unknown manifestation index {value!r}")

    @classmethod
    def from_code(cls, code: int) -> "MIKind":
        for k, c in _KIND_CODES.items():
            if c == code:
                return k
        raise ValueError(f"unknown manifestation index code {code}")


_KIND_CODES = {MIKind.LPI: 0, MIKind.LPI_ISH: 1, MIKind.LSN: 2}


@dataclass(frozen=True)
class ManifestationIndex:
    kind: MIKind
    value: float


def _layers(depth, dz, top, bottom):
    """Midpoints and thicknesses of the sample layers clipped to ``[top, bottom]``.

    ``top`` may be an array (one per loading row).
    """
    upper = np.maximum(depth - dz, top)
    lower = np.minimum(depth, bottom)
    thick = np.maximum(lower - upper, 0.0)
    mid = 0.5 * (upper + lower)
    return mid, thick


def lpi_values(fs, depth, dz, active) -> np.ndarray:
    fs = np.atleast_2d(fs)
    mid, thick = _layers(depth, dz, 0.0, MAX_DEPTH)
    f = np.where(active & (fs < 1.0), 1.0 - fs, 0.0)
    return (f * (10.0 - 0.5 * mid) * thick).sum(axis=1)


def _crust_thickness(fs, depth, dz, active):
    """Depth to the top of the first triggered layer, per loading row."""
    liq = active & (fs < 1.0)
    first = np.argmax(liq, axis=1)
    h1 = depth[first] - dz
    return np.where(liq.any(axis=1), np.maximum(h1, 0.0), np.inf)


def lpi_ish_values(fs, depth, dz, active) -> np.ndarray:
    fs = np.atleast_2d(fs)
    h1 = _crust_thickness(fs, depth, dz, active)[:, None]
    top = np.maximum(h1, ISH_MIN_DEPTH)
    top = np.where(np.isfinite(top), top, MAX_DEPTH)
    mid, thick = _layers(depth[None, :], dz, top, MAX_DEPTH)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        m = np.exp(5.0 / (ISH_WEIGHT * (1.0 - fs))) - 1.0
        gate = (fs < 1.0) & (np.where(h1 > 0, h1 * m, 0.0) <= ISH_CRUST_LIMIT)
    f = np.where(active & gate, 1.0 - fs, 0.0)
    w = np.divide(ISH_WEIGHT, mid, out=np.zeros_like(mid), where=thick > 0)
    return (f * w * thick).sum(axis=1)


# Zhang, Robertson & Brachman (2002): volumetric strain (%) curves per FS,
# each a list of (qc1Ncs upper bound, coefficient, exponent) pieces.
_ZRB_CURVES = (
    (0.5, ((200.0, 102.0, -0.82),)),
    (0.6, ((147.0, 102.0, -0.82), (200.0, 2411.0, -1.45))),
    (0.7, ((110.0, 102.0, -0.82), (200.0, 1701.0, -1.42))),
    (0.8, ((80.0, 102.0, -0.82), (200.0, 1690.0, -1.46))),
    (0.9, ((60.0, 102.0, -0.82), (200.0, 1430.0, -1.48))),
    (1.0, ((200.0, 64.0, -0.93),)),
    (1.1, ((200.0, 11.0, -0.65),)),
    (1.2, ((200.0, 9.7, -0.69),)),
    (1.3, ((200.0, 7.6, -0.71),)),
    (2.0, ((200.0, 0.0, 0.0),)),
)
_ZRB_FS = np.array([fs for fs, _ in _ZRB_CURVES])


def _zrb_curve(pieces, q):
    out = np.zeros_like(q)
    done = np.zeros(q.shape, bool)
    for upper, a, b in pieces:
        sel = ~done & (q <= upper)
        out[sel] = a * q[sel] ** b
        done |= sel
    return out


def volumetric_strain(fs, qc1ncs) -> np.ndarray:
    """Post-liquefaction volumetric strain in percent.

    Evaluates each published FS curve at ``qc1ncs`` (clamped to [33, 200])
    and interpolates linearly in FS between neighbouring curves. Each curve
    is raised to the envelope of the curves above it in FS so that strain
    never grows with FS.
    """
    fs = np.asarray(fs, dtype=float)
    q = np.clip(np.broadcast_to(np.asarray(qc1ncs, dtype=float), fs.shape), 33.0, 200.0)
    curves = np.stack([_zrb_curve(p, q) for _, p in _ZRB_CURVES], axis=-1)
    # the published FS=0.5 and FS=0.6 curves cross just above qc1Ncs=147;
    # keep strain nonincreasing in FS
    curves = np.maximum.accumulate(curves[..., ::-1], axis=-1)[..., ::-1]
    f = np.clip(fs, _ZRB_FS[0], _ZRB_FS[-1])
    hi = np.clip(np.searchsorted(_ZRB_FS, f, side="left"), 1, len(_ZRB_FS) - 1)
    lo = hi - 1
    f0, f1 = _ZRB_FS[lo], _ZRB_FS[hi]
    t = (f - f0) / (f1 - f0)
    e0 = np.take_along_axis(curves, lo[..., None], axis=-1)[..., 0]
    e1 = np.take_along_axis(curves, hi[..., None], axis=-1)[..., 0]
    return np.clip(e0 + t * (e1 - e0), 0.0, STRAIN_MAX_PCT)


def lsn_values(fs, depth, dz, active, qc1ncs) -> np.ndarray:
    fs = np.atleast_2d(fs)
    mid, thick = _layers(depth, dz, 0.0, np.inf)
    eps = np.where(active, volumetric_strain(fs, qc1ncs[None, :]), 0.0) / 100.0
    return (1000.0 * eps / mid * thick).sum(axis=1)


def index_values(kind, fs, depth, dz, active, qc1ncs) -> np.ndarray:
    kind = MIKind.parse(kind)
    if kind is MIKind.LPI:
        return lpi_values(fs, depth, dz, active)
    if kind is MIKind.LPI_ISH:
        return lpi_ish_values(fs, depth, dz, active)
    return lsn_values(fs, depth, dz, active, qc1ncs)


def _single(kind, fsp: FsProfile) -> ManifestationIndex:
    if len(fsp.depth) == 0:
        raise EmptyProfile("factor-of-safety profile has no samples")
    active = fsp.susceptible & fsp.saturated
    value = index_values(kind, fsp.fs_liq, fsp.depth, fsp.interval, active, fsp.qc1ncs)[0]
    return ManifestationIndex(MIKind.parse(kind), float(value))


def lpi(fsp: FsProfile) -> ManifestationIndex:
    return _single(MIKind.LPI, fsp)


def lpi_ish(fsp: FsProfile) -> ManifestationIndex:
    return _single(MIKind.LPI_ISH, fsp)


def lsn(fsp: FsProfile) -> ManifestationIndex:
    return _single(MIKind.LSN, fsp)


def compute(kind, fsp: FsProfile) -> ManifestationIndex:
    return _single(kind, fsp)
