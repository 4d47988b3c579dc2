"""Site response curves MI(PGA_M) and their 16-bit storage.

A site is swept over a loading array of (PGA, Mw) pairs, each loading is
reduced to a magnitude-scaled PGA, and the resulting (PGA_M, MI) samples
are fitted with the two-parameter arctangent curve::

    MI = 0                                  for PGA_M < 0.1 g
    MI = A * atan(B * (PGA_M - A/100/B)^2)  otherwise
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .cpt import CptProfile
from .errors import DegenerateFit, TooFewSamples
from .indices import MIKind, index_values
from .mechanics import IC_THRESHOLD, fs_matrix, msf, resistance

log = logging.getLogger(__name__)

PGA_M_THRESHOLD = 0.1
SCALE = 0.01
NODATA = 65535
MAX_VALUE = 655.34
A_BOUNDS = (0.0, MAX_VALUE)
B_BOUNDS = (0.01, MAX_VALUE)
MIN_SAMPLES = 10


@dataclass(frozen=True)
class ResponseCurve:
    A: float
    B: float
    kind: MIKind = MIKind.LPI
    fit_rmse: float = 0.0


@dataclass(frozen=True)
class LoadingArray:
    pga_values: tuple
    magnitude_values: tuple

    def __post_init__(self):
        pga = tuple(float(p) for p in self.pga_values)
        mag = tuple(float(m) for m in self.magnitude_values)
        if not pga or not mag:
            raise ValueError("loading array must not be empty")
        if min(pga) < 0.05 - 1e-9 or max(pga) > 2.0 + 1e-9:
            raise ValueError("PGA values must lie within [0.05, 2.0] g")
        if min(mag) < 4.5 - 1e-9 or max(mag) > 9.0 + 1e-9:
            raise ValueError("magnitudes must lie within [4.5, 9.0]")
        object.__setattr__(self, "pga_values", pga)
        object.__setattr__(self, "magnitude_values", mag)

    @classmethod
    def default(cls) -> "LoadingArray":
        pga = np.round(np.arange(1, 41) * 0.05, 10)
        mag = np.round(4.5 + 0.5 * np.arange(10), 10)
        return cls(tuple(pga), tuple(mag))

    def pairs(self):
        """Flattened (pga, magnitude) arrays, magnitude-major."""
        m, p = np.meshgrid(self.magnitude_values, self.pga_values, indexing="ij")
        return p.ravel(), m.ravel()

    def __len__(self):
        return len(self.pga_values) * len(self.magnitude_values)


def eval_curve(curve: ResponseCurve, pga_m):
    """Evaluate the response curve; scalar in, float out."""
    x = np.asarray(pga_m, dtype=float)
    out = curve_values(curve.A, curve.B, x)
    return out if out.ndim else float(out)


def curve_values(a, b, x):
    """Response curve on broadcast arrays, without validation."""
    with np.errstate(over="ignore", invalid="ignore"):
        val = a * np.arctan(b * (x - (a / 100.0) / b) ** 2)
    return np.where(x < PGA_M_THRESHOLD, 0.0, np.maximum(val, 0.0))


def sweep_samples(profile: CptProfile, array: LoadingArray, kinds, region="global", ic_threshold=IC_THRESHOLD, res=None):
    """Run every loading of ``array`` through mechanics and indices.

    Returns ``(pga_m, {kind: mi})`` with samples sorted by ``pga_m``.
    """
    if res is None:
        res = resistance(profile, region, ic_threshold)
    pga, mag = array.pairs()
    fs = fs_matrix(res, pga, mag)
    pga_m = pga / msf(mag)
    order = np.argsort(pga_m, kind="stable")
    active = res.susceptible & res.saturated
    out = {}
    for kind in kinds:
        kind = MIKind.parse(kind)
        mi = index_values(kind, fs, res.depth, res.interval, active, res.qc1ncs)
        out[kind] = mi[order]
    return pga_m[order], out


def sweep_site(profile: CptProfile, array: LoadingArray, kind, region="global", ic_threshold=IC_THRESHOLD):
    """List of ``(pga_m, MI)`` for every loading, sorted by ``pga_m``."""
    kind = MIKind.parse(kind)
    pga_m, mi = sweep_samples(profile, array, [kind], region, ic_threshold)
    return list(zip(pga_m.tolist(), mi[kind].tolist()))


def _starts(x, y):
    """Best cells of a coarse (A, log B) lattice, as Nelder-Mead starts."""
    peak = float(y.max())
    a_grid = np.unique(np.clip(peak * np.array([0.2, 0.4, 0.55, 0.64, 0.75, 0.9, 1.1, 1.4, 2.0]), 1e-3, MAX_VALUE))
    logb = np.linspace(np.log(B_BOUNDS[0]), np.log(B_BOUNDS[1]), 45)
    a, lb = np.meshgrid(a_grid, logb, indexing="ij")
    pred = curve_values(a[..., None], np.exp(lb)[..., None], x)
    sse = ((pred - y) ** 2).sum(axis=-1)
    best = np.argsort(sse, axis=None, kind="stable")[:6]
    return [(float(a.flat[i]), float(lb.flat[i])) for i in best]


def fit_curve(samples, kind=MIKind.LPI) -> ResponseCurve:
    """Least-squares fit of (A, B) to ``(pga_m, MI)`` samples with pga_m >= 0.1 g."""
    kind = MIKind.parse(kind)
    data = np.asarray(list(samples), dtype=float).reshape(-1, 2)
    data = data[data[:, 0] >= PGA_M_THRESHOLD]
    if len(data) < MIN_SAMPLES:
        raise TooFewSamples(f"need >= {MIN_SAMPLES} samples with PGA_M >= {PGA_M_THRESHOLD} g, got {len(data)}")
    if not np.all(np.isfinite(data)):
        raise DegenerateFit("non-finite samples")
    data = data[np.lexsort((data[:, 1], data[:, 0]))]
    x, y = data[:, 0], data[:, 1]

    if np.all(y == 0):
        return ResponseCurve(0.0, B_BOUNDS[0], kind, 0.0)

    def sse(p):
        return float(((curve_values(p[0], math.exp(p[1]), x) - y) ** 2).sum())

    bounds = [A_BOUNDS, (math.log(B_BOUNDS[0]), math.log(B_BOUNDS[1]))]
    # SSE tolerance relative to the data's energy; an absolute one never
    # triggers at a nonzero minimum and runs every start to maxfev
    fatol = 1e-14 * max(1.0, float(np.dot(y, y)))
    best = None
    for start in _starts(x, y):
        res = minimize(
            sse,
            np.array(start),
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-10, "fatol": fatol, "maxiter": 4000, "maxfev": 8000},
        )
        if best is None or res.fun < best.fun:
            best = res
    if not math.isfinite(best.fun):
        raise DegenerateFit("SSE is not finite")
    a, b = float(best.x[0]), float(math.exp(best.x[1]))
    return ResponseCurve(a, b, kind, math.sqrt(best.fun / len(x)))


def site_curves(profile: CptProfile, array: LoadingArray, kinds, region="global", ic_threshold=IC_THRESHOLD):
    pga_m, mi = sweep_samples(profile, array, kinds, region, ic_threshold)
    return {k: fit_curve(np.column_stack([pga_m, v]), k) for k, v in mi.items()}


# ---------------------------------------------------------------------------
# 16-bit codec
# ---------------------------------------------------------------------------

def encode_ab(x, scale: float = SCALE):
    """Quantize to uint16 codes; NaN maps to the nodata code, out-of-range values are clamped."""
    arr = np.asarray(x, dtype=float)
    top = (NODATA - 1) * scale
    nan = np.isnan(arr)
    clamped = np.clip(np.where(nan, 0.0, arr), 0.0, top)
    if np.any((arr[~nan] < 0) | (arr[~nan] > top)):
        log.info("encode_ab: %d values clamped to [0, %g]", int(np.sum((arr[~nan] < 0) | (arr[~nan] > top))), top)
    codes = np.rint(clamped / scale).astype(np.uint16)
    codes = np.where(nan, NODATA, codes).astype(np.uint16)
    return codes if codes.ndim else int(codes)


def decode_ab(code, scale: float = SCALE):
    codes = np.asarray(code)
    out = np.where(codes == NODATA, np.nan, codes.astype(float) * scale)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# curve table: site_id,kind,A,B,fit_rmse
# ---------------------------------------------------------------------------

CURVE_COLUMNS = ("site_id", "kind", "A", "B", "fit_rmse")


def write_curve_table(rows, path):
    """``rows`` is an iterable of ``(site_id, ResponseCurve)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for site_id, c in rows:
            w.writerow([site_id, c.kind.value, repr(c.A), repr(c.B), repr(c.fit_rmse)])


def read_curve_table(path):
    out = []
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            curve = ResponseCurve(float(row["A"]), float(row["B"]), MIKind.parse(row["kind"]), float(row["fit_rmse"]))
            out.append((row["site_id"], curve))
    return out
