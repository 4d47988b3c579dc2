"""CPT soundings: data model, file I/O and standardization.

Units throughout: depth in m, cone tip resistance ``qc`` in MPa, sleeve
friction ``fs`` in kPa. A standardized profile is sampled at
``interval, 2*interval, ...`` and each sample represents the layer
``(z - interval, z]`` below the ground surface.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import IntervalNonPositive, NonFiniteInput, SeriesTooShort, TooFewRecords

log = logging.getLogger(__name__)

DEFAULT_INTERVAL = 0.05
# sleeve-to-tip offset search window
DEFAULT_MAX_LAG_M = 0.2


class CptRecord(NamedTuple):
    depth: float
    qc: float
    fs: float
    qc_valid: bool
    fs_valid: bool


@dataclass(frozen=True, eq=False)
class CptProfile:
    """One CPT sounding plus the site metadata the mechanics need."""

    id: str
    lon: float
    lat: float
    depth: np.ndarray
    qc: np.ndarray
    fs: np.ndarray
    qc_valid: np.ndarray | None = None
    fs_valid: np.ndarray | None = None
    gwt_depth: float = 0.0
    predrill_depth: float = 0.0
    unit_weight_model: str = "two_zone"
    interval: float | None = None  # set once standardized
    aligned: bool = False  # sleeve already shifted onto the tip
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=float)
        qc = np.asarray(self.qc, dtype=float)
        fs = np.asarray(self.fs, dtype=float)
        if not (depth.shape == qc.shape == fs.shape) or depth.ndim != 1:
            raise ValueError("depth, qc and fs must be 1-D arrays of equal length")
        qv = np.ones(depth.shape, bool) if self.qc_valid is None else np.asarray(self.qc_valid, bool)
        fv = np.ones(depth.shape, bool) if self.fs_valid is None else np.asarray(self.fs_valid, bool)
        if self.gwt_depth < 0 or self.predrill_depth < 0:
            raise ValueError("gwt_depth and predrill_depth must be >= 0")
        for name, arr in (("depth", depth), ("qc", qc), ("fs", fs), ("qc_valid", qv), ("fs_valid", fv)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.depth)

    def __eq__(self, other):
        if not isinstance(other, CptProfile):
            return NotImplemented
        scalars = ("id", "lon", "lat", "gwt_depth", "predrill_depth", "unit_weight_model", "interval", "aligned")
        if any(getattr(self, s) != getattr(other, s) for s in scalars):
            return False
        arrays = ("depth", "qc", "fs", "qc_valid", "fs_valid")
        return all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True) for a in arrays)

    def records(self) -> Iterator[CptRecord]:
        for row in zip(self.depth, self.qc, self.fs, self.qc_valid, self.fs_valid):
            yield CptRecord(*(float(v) for v in row[:3]), bool(row[3]), bool(row[4]))

    def with_gwt(self, gwt_depth: float) -> "CptProfile":
        return replace(self, gwt_depth=float(gwt_depth))

    @property
    def is_standardized(self) -> bool:
        return self.interval is not None


def _shift(x: np.ndarray, lag: int) -> np.ndarray:
    """``out[i] = x[i + lag]`` with edge values held at the ends."""
    n = len(x)
    idx = np.clip(np.arange(n) + lag, 0, n - 1)
    return x[idx]


def align_lag(a, b, max_lag: int) -> int:
    """Integer lag ``k`` maximizing the cross-covariance of ``a[i]`` and ``b[i + k]``.

    Covariance is taken over the overlapping window only, on series with
    their window means removed. Ties go to the smaller ``|k|``, then to the
    negative lag.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    max_lag = int(max_lag)
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    if len(a) != len(b) or len(a) < max_lag + 2:
        raise SeriesTooShort(f"need equal-length series of at least {max_lag + 2} samples")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0
    n = len(a)
    covs = {}
    for k in range(-max_lag, max_lag + 1):
        if k >= 0:
            xa, xb = a[: n - k], b[k:]
        else:
            xa, xb = a[-k:], b[: n + k]
        covs[k] = float(np.mean((xa - xa.mean()) * (xb - xb.mean())))
    best = max(covs.values())
    tol = 1e-12 * max(abs(c) for c in covs.values())
    candidates = [k for k, c in covs.items() if c >= best - tol]
    return min(candidates, key=lambda k: (abs(k), k))


def _collapse_duplicates(depth, values):
    uniq, inverse = np.unique(depth, return_inverse=True)
    if len(uniq) == len(depth):
        return depth, values
    sums = np.bincount(inverse, weights=values)
    counts = np.bincount(inverse)
    return uniq, sums / counts


def _channel(depth, values, valid, predrill):
    # readings at or above the predrill depth are not trusted
    below = depth > predrill if predrill > 0 else np.ones(depth.shape, bool)
    ok = valid & np.isfinite(values) & below
    if np.any(np.isinf(values[valid])):
        raise NonFiniteInput("infinite measurement flagged valid")
    return _collapse_duplicates(depth[ok], values[ok])


def standardize(raw: CptProfile, interval: float = DEFAULT_INTERVAL, max_lag: int | None = None) -> CptProfile:
    """Resample a sounding onto a uniform, gap-free depth grid.

    Invalid or NaN samples are linearly infilled from their nearest valid
    neighbours, samples shallower than the predrill depth take the first
    valid value below it, the profile is truncated at the deepest depth where
    both channels are valid, and the sleeve channel is shifted onto the tip
    by the lag of maximum cross-covariance (skipped if already aligned).
    """
    if not interval > 0 or not math.isfinite(interval):
        raise IntervalNonPositive(f"interval must be > 0, got {interval}")
    if not np.all(np.isfinite(raw.depth)):
        raise NonFiniteInput("non-finite depth")
    if np.any(raw.depth < 0):
        raise ValueError("depths must be >= 0")

    zq, q = _channel(raw.depth, raw.qc, raw.qc_valid & (raw.qc > 0), raw.predrill_depth)
    zf, f = _channel(raw.depth, raw.fs, raw.fs_valid & (raw.fs >= 0), raw.predrill_depth)
    if len(zq) < 2 or len(zf) < 2:
        raise TooFewRecords(f"profile {raw.id!r}: fewer than 2 valid records")

    zmax = min(zq[-1], zf[-1])
    n = int(math.floor(zmax / interval + 1e-9))
    if n < 2:
        raise TooFewRecords(f"profile {raw.id!r}: shallower than two sampling intervals")
    grid = np.arange(1, n + 1) * interval
    qc = np.interp(grid, zq, q)
    fs = np.interp(grid, zf, f)

    aligned = raw.aligned and raw.interval == interval
    if not aligned:
        lag_max = max_lag if max_lag is not None else max(1, int(round(DEFAULT_MAX_LAG_M / interval)))
        lag_max = min(lag_max, n - 2)
        lag = align_lag(qc, fs, lag_max)
        if lag:
            log.debug("profile %s: sleeve shifted by %d samples", raw.id, lag)
            fs = _shift(fs, lag)

    return replace(
        raw,
        depth=grid,
        qc=qc,
        fs=fs,
        qc_valid=None,
        fs_valid=None,
        interval=float(interval),
        aligned=True,
    )


# ---------------------------------------------------------------------------
# file I/O: <id>.csv (depth_m,qc_mpa,fs_kpa) + <id>.json sidecar
# ---------------------------------------------------------------------------

def _parse_float(text):
    text = text.strip()
    if not text or text.lower() in ("nan", "na", "null"):
        return math.nan
    return float(text)


def read_cpt(csv_path, sidecar_path=None) -> CptProfile:
    csv_path = Path(csv_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else csv_path.with_suffix(".json")
    meta = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    depth, qc, fs, qv, fv = [], [], [], [], []
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"depth_m", "qc_mpa", "fs_kpa"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{csv_path}: missing columns {sorted(missing)}")
        for row in reader:
            depth.append(_parse_float(row["depth_m"]))
            q, f = _parse_float(row["qc_mpa"]), _parse_float(row["fs_kpa"])
            qc.append(q)
            fs.append(f)
            qv.append(not math.isnan(q) and row.get("qc_valid", "1").strip() not in ("0", "false", "False"))
            fv.append(not math.isnan(f) and row.get("fs_valid", "1").strip() not in ("0", "false", "False"))
    return CptProfile(
        id=str(meta.get("id", csv_path.stem)),
        lon=float(meta.get("lon", math.nan)),
        lat=float(meta.get("lat", math.nan)),
        depth=np.array(depth),
        qc=np.array(qc),
        fs=np.array(fs),
        qc_valid=np.array(qv),
        fs_valid=np.array(fv),
        gwt_depth=float(meta.get("gwt_depth", 0.0)),
        predrill_depth=float(meta.get("predrill_depth", 0.0)),
        unit_weight_model=str(meta.get("unit_weight_model", "two_zone")),
        interval=meta.get("interval"),
        aligned=bool(meta.get("aligned", False)),
    )


def write_cpt(profile: CptProfile, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{profile.id}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["depth_m", "qc_mpa", "fs_kpa"])
        for r in profile.records():
            w.writerow([
                repr(r.depth),
                repr(r.qc) if r.qc_valid else "",
                repr(r.fs) if r.fs_valid else "",
            ])
    sidecar = {
        "id": profile.id,
        "lon": profile.lon,
        "lat": profile.lat,
        "gwt_depth": profile.gwt_depth,
        "predrill_depth": profile.predrill_depth,
        "unit_weight_model": profile.unit_weight_model,
    }
    if profile.interval is not None:
        sidecar["interval"] = profile.interval
        sidecar["aligned"] = profile.aligned
    csv_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    return csv_path


def read_cpt_dir(directory) -> list[CptProfile]:
    return [read_cpt(p) for p in sorted(Path(directory).glob("*.csv"))]
