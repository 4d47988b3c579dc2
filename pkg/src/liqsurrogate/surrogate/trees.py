"""Weighted CART regression trees and bagged ensembles.

Trees use axis-aligned threshold splits (``x[f] <= t`` goes left) chosen
to maximize the weighted reduction in squared error. A node is split only
when both children keep at least ``min_leaf`` training draws, where a row
drawn k times by the bootstrap counts k times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import SchemaMismatch, TooFewRows

OUTPUT_MAX = 655.34
LEAF = -1


@dataclass(frozen=True)
class Hyperparams:
    n_trees: int = 100
    min_leaf: int = 5
    max_depth: int | None = None  # None = unlimited
    features_per_split: int | None = None  # None = all features (plain bagging)
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ValueError("n_trees and min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")

    @property
    def depth_key(self) -> float:
        return math.inf if self.max_depth is None else self.max_depth


@dataclass(frozen=True, eq=False)
class Tree:
    """Flattened node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray  # int32
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64
    gain: np.ndarray  # float64, weighted SSE decrease at the split (0 at leaves)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] != LEAF
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active[r] = self.feature[node[r]] != LEAF
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


def _best_split(Xn, yn, wn, cn, min_leaf, features):
    """Best (feature, threshold, gain) for one node, or None.

    All candidate features are evaluated together on column-sorted copies.
    """
    order = np.argsort(Xn[:, features], axis=0, kind="stable")
    xs = np.take_along_axis(Xn[:, features], order, axis=0)
    ys = yn[order]
    ws = wn[order]
    cs = np.cumsum(cn[order], axis=0)
    # centre on the node mean to limit cancellation in the SSE identities
    mu = np.dot(wn, yn) / wn.sum()
    ys = ys - mu
    wl = np.cumsum(ws, axis=0)
    sl = np.cumsum(ws * ys, axis=0)
    w_tot, s_tot, c_tot = wl[-1], sl[-1], cs[-1]
    wr = w_tot - wl
    sr = s_tot - sl
    valid = (xs[:-1] < xs[1:]) & (cs[:-1] >= min_leaf) & ((c_tot - cs)[:-1] >= min_leaf)
    valid &= (wl[:-1] > 0) & (wr[:-1] > 0)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = sl[:-1] ** 2 / wl[:-1] + sr[:-1] ** 2 / wr[:-1] - s_tot[0] ** 2 / w_tot[0]
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain.T))  # feature-major: ties go to the lowest feature, then threshold
    fi, pos = divmod(flat, gain.shape[0])
    g = float(gain[pos, fi])
    if not g > 0:
        return None
    lo, hi = xs[pos, fi], xs[pos + 1, fi]
    thr = lo + (hi - lo) / 2.0
    if not thr < hi:
        thr = lo
    return int(features[fi]), float(thr), g


def fit_tree(X, y, w, counts, hp: Hyperparams, rng=None) -> Tree:
    """Grow one tree on rows with ``counts > 0``; ``w`` already includes the counts."""
    X = np.asarray(X, dtype=float)
    n_feat = X.shape[1]
    feature, threshold, left, right, value, gain = [], [], [], [], [], []

    def new_node():
        for arr, v in ((feature, LEAF), (threshold, 0.0), (left, LEAF), (right, LEAF), (value, 0.0), (gain, 0.0)):
            arr.append(v)
        return len(feature) - 1

    rows = np.flatnonzero(counts > 0)
    root = new_node()
    stack = [(root, rows, 0)]
    max_depth = hp.max_depth if hp.max_depth is not None else np.iinfo(np.int64).max
    while stack:
        node, idx, depth = stack.pop()
        yn, wn = y[idx], w[idx]
        value[node] = float(yn[0]) if np.all(yn == yn[0]) else float(np.dot(wn, yn) / wn.sum())
        if depth >= max_depth or len(idx) < 2 or np.all(yn == yn[0]):
            continue
        if counts[idx].sum() < 2 * hp.min_leaf:
            continue
        if hp.features_per_split is not None and hp.features_per_split < n_feat:
            features = np.sort(rng.choice(n_feat, hp.features_per_split, replace=False))
        else:
            features = np.arange(n_feat)
        split = _best_split(X[idx], yn, wn, counts[idx].astype(float), hp.min_leaf, features)
        if split is None:
            continue
        f, t, g = split
        go_left = X[idx, f] <= t
        li, ri = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node], gain[node] = f, t, li, ri, g
        # push right first so the left subtree is numbered first
        stack.append((ri, idx[~go_left], depth + 1))
        stack.append((li, idx[go_left], depth + 1))

    return Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
        gain=np.array(gain, dtype=np.float64),
    )


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    trees: tuple
    hyperparams: Hyperparams
    schema_id: str
    feature_names: tuple
    target: str = ""
    kind: str = ""

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict_raw(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        total = np.zeros(len(X))
        for t in self.trees:
            total += t.predict(X)
        return total / len(self.trees)

    def predict_batch(self, X) -> np.ndarray:
        """Mean of tree outputs, clamped to the storable range [0, 655.34]."""
        return np.clip(self.predict_raw(X), 0.0, OUTPUT_MAX)


def _tree_rng(seed, i):
    return np.random.default_rng([int(seed), int(i)])


def train_bagged(X, y, weight=None, hp: Hyperparams = Hyperparams(), seed=0, schema=None, target="", kind="") -> TreeEnsemble:
    """Bagged regression trees; each tree sees a bootstrap resample of size n.

    Deterministic for a given seed: tree ``i`` draws from a generator seeded
    by ``(seed, i)``, so results do not depend on scheduling.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    w = np.ones(n) if weight is None else np.asarray(weight, dtype=float)
    if n < 2 * hp.min_leaf or n < 1:
        raise TooFewRows(f"need >= {2 * hp.min_leaf} rows, got {n}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("features and targets must be finite (impute first)")
    trees = []
    for i in range(hp.n_trees):
        rng = _tree_rng(seed, i)
        if hp.bootstrap:
            counts = np.bincount(rng.integers(0, n, n), minlength=n)
        else:
            counts = np.ones(n, dtype=np.int64)
        counts = np.where(w > 0, counts, 0)
        trees.append(fit_tree(X, y, w * counts, counts, hp, rng))
    names = tuple(schema.names) if schema is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    sid = schema.schema_id if schema is not None else ""
    return TreeEnsemble(tuple(trees), hp, sid, names, target, kind)


def predictor_importance(ens: TreeEnsemble) -> np.ndarray:
    """Total weighted SSE decrease per feature over all trees, scaled to max 1."""
    imp = np.zeros(ens.n_features)
    for t in ens.trees:
        split = t.feature != LEAF
        np.add.at(imp, t.feature[split], t.gain[split])
    top = imp.max(initial=0.0)
    return imp / top if top > 0 else imp


def predict(ens: TreeEnsemble, fv) -> float:
    """Predict one feature vector; ``fv`` must carry the ensemble's schema id."""
    if getattr(fv, "schema_id", ens.schema_id) != ens.schema_id:
        raise SchemaMismatch(f"feature vector schema {fv.schema_id} != model schema {ens.schema_id}")
    values = getattr(fv, "values", fv)
    return float(ens.predict_batch(np.asarray(values, dtype=float)[None, :])[0])
