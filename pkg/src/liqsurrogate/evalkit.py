"""Evaluation statistics for probabilistic liquefaction predictions.

Brier scores with percentile bootstrap intervals, two-sample
Kolmogorov-Smirnov distance, Cohen's d, Moran's I with a spatially
stratified (cluster) bootstrap, calibration curves, Nash-Sutcliffe
efficiency and residual summaries.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial import cKDTree

from .errors import ConstantField, ConstantObserved, Empty, TooFew, ZeroVariance
from .surrogate.features import EARTH_RADIUS_M, ecef

MORAN_THRESHOLD = 0.3
CUTOFF_FACTOR = 5.0
CHUNK = 250  # bootstrap reps per derived generator


@dataclass(frozen=True, eq=False)
class CaseSet:
    lon: np.ndarray
    lat: np.ndarray
    observed: np.ndarray
    predicted: dict = field(default_factory=dict)  # model name -> probabilities

    def __post_init__(self):
        o = np.asarray(self.observed, dtype=float)
        if not np.all((o == 0) | (o == 1)):
            raise ValueError("observed outcomes must be 0 or 1")
        object.__setattr__(self, "observed", o)
        object.__setattr__(self, "lon", np.asarray(self.lon, float))
        object.__setattr__(self, "lat", np.asarray(self.lat, float))
        preds = {}
        for k, p in self.predicted.items():
            p = np.asarray(p, dtype=float)
            if p.shape != o.shape or np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
                raise ValueError(f"predictions of {k!r} must be probabilities aligned with observations")
            preds[k] = p
        object.__setattr__(self, "predicted", preds)

    def __len__(self):
        return len(self.observed)


def read_cases(path) -> CaseSet:
    """Case CSV ``lon,lat,observed,p_<model>...``; the ``p_`` prefix is dropped."""
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for need in ("lon", "lat", "observed"):
            if need not in cols:
                raise ValueError(f"{path}: missing column {need!r}")
        rows = list(reader)
    models = [c for c in cols if c not in ("lon", "lat", "observed")]
    get = lambda c: np.array([float(r[c]) for r in rows])  # noqa: E731
    preds = {(m[2:] if m.startswith("p_") else m): get(m) for m in models}
    return CaseSet(get("lon"), get("lat"), get("observed"), preds)


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

def _nonempty(*arrays):
    for a in arrays:
        if len(a) == 0:
            raise Empty("empty sample")


def brier_contributions(p, o) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    o = np.asarray(o, dtype=float)
    if p.shape != o.shape:
        raise ValueError("predictions and observations differ in length")
    return (p - o) ** 2


def brier(p, o) -> float:
    c = brier_contributions(p, o)
    _nonempty(c)
    return float(c.mean())


def ks_two_sample(a, b) -> float:
    """sup |F_a - F_b| over the merged sample."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    _nonempty(a, b)
    v = np.concatenate([a, b])
    fa = np.searchsorted(a, v, side="right") / len(a)
    fb = np.searchsorted(b, v, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def cohens_d(treatment, control) -> float:
    t = np.asarray(treatment, dtype=float)
    c = np.asarray(control, dtype=float)
    if len(t) < 2 or len(c) < 2:
        raise TooFew("each sample needs >= 2 values")
    nt, nc = len(t), len(c)
    pooled = math.sqrt(((nt - 1) * t.var(ddof=1) + (nc - 1) * c.var(ddof=1)) / (nt + nc - 2))
    if pooled == 0:
        raise ZeroVariance("pooled standard deviation is zero")
    return float((t.mean() - c.mean()) / pooled)


def nash_sutcliffe(predicted, observed) -> float:
    p = np.asarray(predicted, dtype=float)
    o = np.asarray(observed, dtype=float)
    if len(o) < 2:
        raise TooFew("need >= 2 observations")
    denom = float(np.sum((o - o.mean()) ** 2))
    if denom == 0:
        raise ConstantObserved("observed values are constant")
    return 1.0 - float(np.sum((p - o) ** 2)) / denom


class CalibrationCurve(NamedTuple):
    mean_predicted: np.ndarray
    mean_observed: np.ndarray
    count: np.ndarray


def calibration_curve(p, o, n_bins: int = 10) -> CalibrationCurve:
    """Equal-width bins on [0, 1]; the last bin is closed at 1. Empty bins are omitted."""
    p = np.asarray(p, dtype=float)
    o = np.asarray(o, dtype=float)
    _nonempty(p)
    k = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
    count = np.bincount(k, minlength=n_bins)
    sp = np.bincount(k, weights=p, minlength=n_bins)
    so = np.bincount(k, weights=o, minlength=n_bins)
    ok = count > 0
    return CalibrationCurve(sp[ok] / count[ok], so[ok] / count[ok], count[ok])


class ResidualSummary(NamedTuple):
    mae: float
    msd: float
    bias: float


def residual_summary(residuals, conditioning=None, n_bins: int = 10) -> ResidualSummary:
    """Median absolute residual, median of per-bin standard deviations, and mean bias.

    Bins hold equal counts of residuals ordered by ``conditioning`` (e.g.
    PGA_M); without it the residuals keep their given order.
    """
    r = np.asarray(residuals, dtype=float)
    _nonempty(r)
    if conditioning is not None:
        r_sorted = r[np.argsort(np.asarray(conditioning, dtype=float), kind="stable")]
    else:
        r_sorted = r
    parts = [b for b in np.array_split(r_sorted, min(n_bins, len(r))) if len(b)]
    msd = float(np.median([b.std() for b in parts]))
    return ResidualSummary(float(np.median(np.abs(r))), msd, float(r.mean()))


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------

class BootstrapCI(NamedTuple):
    low: float
    high: float
    mean: float  # plug-in statistic on the original sample


def _draws(n, reps, seed):
    """Yield index blocks; block c comes from a generator seeded by (seed, c)."""
    for c, start in enumerate(range(0, reps, CHUNK)):
        size = min(CHUNK, reps - start)
        rng = np.random.default_rng([int(seed), c])
        yield rng.integers(0, n, size=(size, n))


def _cluster_draws(labels, reps, seed):
    """Index arrays for a whole-cluster bootstrap (one generator per rep chunk)."""
    labels = np.asarray(labels)
    n = len(labels)
    uniq, inverse = np.unique(labels, return_inverse=True)
    members = [np.flatnonzero(inverse == g) for g in range(len(uniq))]
    for c, start in enumerate(range(0, reps, CHUNK)):
        size = min(CHUNK, reps - start)
        rng = np.random.default_rng([int(seed), c])
        for _ in range(size):
            picked, total = [], 0
            while total < n:
                m = members[int(rng.integers(len(members)))]
                picked.append(m)
                total += len(m)
            yield np.concatenate(picked)


def bootstrap_ci(x, statistic=None, reps: int = 10000, level: float = 0.99, seed=0, clusters=None) -> BootstrapCI:
    """Percentile bootstrap interval of ``statistic`` (default: mean).

    With ``clusters`` (one label per value) whole clusters are resampled.
    """
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        raise TooFew("bootstrap needs >= 2 cases")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    stat = statistic or (lambda v: float(np.mean(v)))
    point = float(stat(x))
    values = []
    if clusters is None:
        for idx in _draws(len(x), reps, seed):
            if statistic is None:
                values.append(x[idx].mean(axis=1))
            else:
                values.append(np.array([stat(x[row]) for row in idx]))
        values = np.concatenate(values)
    else:
        values = np.array([stat(x[idx]) for idx in _cluster_draws(clusters, reps, seed)])
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(values, [alpha, 1.0 - alpha])
    return BootstrapCI(float(low), float(high), point)


# ---------------------------------------------------------------------------
# spatial statistics
# ---------------------------------------------------------------------------

def _nn_distances(xyz):
    tree = cKDTree(xyz)
    d, _ = tree.query(xyz, k=min(len(xyz), 16))
    d = np.atleast_2d(d)[:, 1:] if d.ndim > 1 else np.zeros((len(xyz), 0))
    pos = np.where(d > 0, d, np.inf).min(axis=1) if d.shape[1] else np.full(len(xyz), np.inf)
    return tree, pos


def moran_weights(lon, lat, cutoff=None):
    """Row-standardized inverse-distance weights (scipy sparse CSR).

    Distances are chord lengths in metres. The default cutoff is five times
    the median positive nearest-neighbour distance; coincident points are
    held apart by a floor of 1% of that median.
    """
    from scipy.sparse import csr_matrix

    xyz = ecef(lon, lat)
    tree, nn = _nn_distances(xyz)
    finite = nn[np.isfinite(nn)]
    if len(finite) == 0:
        raise TooFew("all points coincide")
    med = float(np.median(finite))
    cutoff = CUTOFF_FACTOR * med if cutoff is None else float(cutoff)
    floor = 0.01 * med
    dm = tree.sparse_distance_matrix(tree, cutoff, output_type="coo_matrix")
    i, j, d = dm.row, dm.col, dm.data
    off = (i != j) & (d > 0)
    i, j, d = i[off], j[off], d[off]
    # coincident pairs may or may not appear as explicit zeros; add them exactly once
    dup_i, dup_j = _coincident_pairs(xyz)
    i = np.concatenate([i, dup_i])
    j = np.concatenate([j, dup_j])
    d = np.concatenate([d, np.zeros(len(dup_i))])
    w = 1.0 / np.maximum(d, floor)
    n = len(xyz)
    W = csr_matrix((w, (i, j)), shape=(n, n))
    rs = np.asarray(W.sum(axis=1)).ravel()
    scale = np.divide(1.0, rs, out=np.zeros(n), where=rs > 0)
    return csr_matrix(W.multiply(scale[:, None]))


def _coincident_pairs(xyz):
    _, inv, counts = np.unique(xyz, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    ii, jj = [], []
    for g in np.flatnonzero(counts > 1):
        m = np.flatnonzero(inv == g)
        a, b = np.meshgrid(m, m, indexing="ij")
        sel = a != b
        ii.append(a[sel])
        jj.append(b[sel])
    if not ii:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(ii), np.concatenate(jj)


def morans_i(values, lon, lat, cutoff=None, weights=None):
    """Global Moran's I; returns ``(I, I > 0.3)``."""
    z = np.asarray(values, dtype=float)
    if len(z) < 3:
        raise TooFew("Moran's I needs >= 3 points")
    z = z - z.mean()
    denom = float(np.dot(z, z))
    if denom == 0:
        raise ConstantField("values are constant")
    W = moran_weights(lon, lat, cutoff) if weights is None else weights
    s0 = float(W.sum())
    if s0 == 0:
        return 0.0, False
    I = len(z) / s0 * float(z @ (W @ z)) / denom
    return I, bool(I > MORAN_THRESHOLD)


def haversine_condensed(lon, lat, radius=EARTH_RADIUS_M):
    """Condensed great-circle distance vector in ``pdist`` order."""
    lo = np.radians(np.asarray(lon, float))
    la = np.radians(np.asarray(lat, float))
    n = len(lo)
    i, j = np.triu_indices(n, k=1)
    a = np.sin((la[j] - la[i]) / 2) ** 2 + np.cos(la[i]) * np.cos(la[j]) * np.sin((lo[j] - lo[i]) / 2) ** 2
    return 2.0 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def cluster_labels(lon, lat, k: int):
    """Average-linkage agglomerative clusters on great-circle distance."""
    n = len(lon)
    if k < 1 or n < k:
        raise TooFew(f"cannot form {k} clusters from {n} points")
    if k == n:
        return np.arange(n)
    if n == 1:
        return np.zeros(1, np.int64)
    Z = linkage(haversine_condensed(lon, lat), method="average")
    return fcluster(Z, t=k, criterion="maxclust") - 1


def spatial_stratified_resample(lon, lat, k: int, seed=0, labels=None):
    """One cluster-bootstrap draw: indices of whole clusters, at least n in total."""
    labels = cluster_labels(lon, lat, k) if labels is None else labels
    return next(_cluster_draws(labels, 1, seed))


def _median_diameter(D, labels):
    diam = []
    for g in np.unique(labels):
        m = np.flatnonzero(labels == g)
        diam.append(D[np.ix_(m, m)].max() if len(m) > 1 else 0.0)
    return float(np.median(diam))


def default_k(lon, lat, range_m: float):
    """Largest k whose clusters have a median diameter >= ``range_m``."""
    from scipy.spatial.distance import squareform

    n = len(lon)
    if n < 2:
        return 1
    d = haversine_condensed(lon, lat)
    D = squareform(d)
    Z = linkage(d, method="average")
    lo, hi = 1, n
    while lo < hi:
        mid = (lo + hi + 1) // 2
        labels = fcluster(Z, t=mid, criterion="maxclust")
        if _median_diameter(D, labels) >= range_m:
            lo = mid
        else:
            hi = mid - 1
    return lo


# ---------------------------------------------------------------------------
# model comparison report
# ---------------------------------------------------------------------------

def compare_models(cases: CaseSet, control=None, reps=10000, level=0.99, seed=0, cluster_range_m=3000.0, n_bins=10):
    """Per-model Brier statistics in the layout of a comparison table.

    BS intervals use the ordinary bootstrap unless Moran's I of the
    per-case Brier contributions exceeds 0.3, in which case whole spatial
    clusters are resampled. KS and Cohen's d compare each model's per-case
    contributions against the control model's.
    """
    if control is not None and control not in cases.predicted:
        raise KeyError(f"control model {control!r} not in cases")
    contrib = {m: brier_contributions(p, cases.observed) for m, p in cases.predicted.items()}
    labels = None
    report = {"n_cases": len(cases), "level": level, "reps": reps, "seed": seed, "control": control, "models": {}}
    for m, c in contrib.items():
        try:
            I, correlated = morans_i(c, cases.lon, cases.lat)
        except (ConstantField, TooFew):
            I, correlated = math.nan, False
        if correlated:
            if labels is None:
                labels = cluster_labels(cases.lon, cases.lat, default_k(cases.lon, cases.lat, cluster_range_m))
            ci = bootstrap_ci(c, reps=reps, level=level, seed=seed, clusters=labels)
        else:
            ci = bootstrap_ci(c, reps=reps, level=level, seed=seed)
        cal = calibration_curve(cases.predicted[m], cases.observed, n_bins)
        entry = {
            "brier": ci.mean,
            "ci_low": ci.low,
            "ci_high": ci.high,
            "morans_i": I,
            "spatial_resampling": bool(correlated),
            "calibration": {
                "mean_predicted": cal.mean_predicted.tolist(),
                "mean_observed": cal.mean_observed.tolist(),
                "count": cal.count.tolist(),
            },
        }
        if control is not None and m != control:
            entry["ks_vs_control"] = ks_two_sample(c, contrib[control])
            try:
                entry["cohens_d_vs_control"] = cohens_d(c, contrib[control])
            except ZeroVariance:
                entry["cohens_d_vs_control"] = math.nan
        report["models"][m] = entry
    return report
